"""Layerwise partitioning: an interval box over the prefix, an exact or step-bound encoding of the suffix.

The suffix query certifies min over the prefix box of logit[label] - logit[target] > 0 for every target. The box
over-approximates the layer `cut` activations, so a minimizer found there may not come from any input: this
mode only ever answers robust or unknown.
"""
import logging
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from enum import unique
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from core.errors import EncodingError
from core.errors import SolverError
from core.intervals import IntervalBounds
from core.intervals import propagate
from core.intervals import propagate_box
from core.network import Network
from core.qubo import spin_count
from core.queries import build_query
from core.queries import target_classes
from core.system import MixedConstraintSystem

logger = logging.getLogger(__name__)

# system -> (certified lower bound, solved to completion)
SuffixSolver = Callable[[MixedConstraintSystem], Tuple[float, bool]]


@unique
class PartitionVerdict(Enum):
    ROBUST = "robust"
    UNKNOWN = "unknown"


@dataclass
class PartitionReport:
    cut: int
    verdict: PartitionVerdict
    lower_bound: float
    suffix_spins: int
    complete: bool
    per_target: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cut": self.cut,
            "verdict": self.verdict.value,
            "lower_bound": self.lower_bound,
            "suffix_spins": self.suffix_spins,
            "complete": self.complete,
            "per_target": self.per_target,
        }


def _check_cut(net: Network, cut: int) -> None:
    if not 1 <= cut <= net.depth - 1:
        raise EncodingError(
            f"cut must be in [1, {net.depth - 1}] for a {net.depth}-layer network, got {cut}",
            payload={"cut": cut, "depth": net.depth},
        )


def prefix_box(net: Network, bounds: IntervalBounds, cut: int) -> Tuple[Network, IntervalBounds]:
    """The suffix network and its interval bounds over the box IBP gives for layer `cut`."""
    _check_cut(net, cut)
    suffix = net.suffix(cut)
    return suffix, propagate_box(suffix, bounds.a_lo[cut - 1], bounds.a_hi[cut - 1])


def query_spins(
    net: Network,
    bounds: IntervalBounds,
    label: int,
    model: int,
    segments: int,
    bits_per_var: int,
    bits_per_slack: int,
    one_sided: bool = False,
) -> int:
    """Largest QUBO dimension over the target classes."""
    return max(
        spin_count(build_query(net, bounds, label, t, model, segments, one_sided), bits_per_var, bits_per_slack)
        for t in target_classes(net, label)
    )


def split_verify(
    net: Network,
    x0: np.ndarray,
    eps: float,
    cut: int,
    label: int,
    suffix_solver: SuffixSolver,
    model: int = 1,
    segments: int = 2,
    bits_per_var: int = 6,
    bits_per_slack: int = 4,
    one_sided: bool = False,
    bounds: Optional[IntervalBounds] = None,
) -> PartitionReport:
    _check_cut(net, cut)
    if bounds is None:
        bounds = propagate(net, x0, eps)
    suffix, suffix_bounds = prefix_box(net, bounds, cut)

    lower = np.inf
    complete = True
    spins = 0
    per_target = []
    for target in target_classes(net, label):
        system = build_query(suffix, suffix_bounds, label, target, model, segments, one_sided)
        spins = max(spins, spin_count(system, bits_per_var, bits_per_slack))
        bound, done = suffix_solver(system)
        complete = complete and done
        lower = min(lower, bound)
        per_target.append({"target": target, "lower_bound": bound, "complete": done})
        if bound <= 0:
            break

    verdict = PartitionVerdict.ROBUST if lower > 0 else PartitionVerdict.UNKNOWN
    logger.info(f"split verification cut={cut} label={label}: lower_bound={lower:.6g} {verdict.value} spins={spins}")
    return PartitionReport(
        cut=cut,
        verdict=verdict,
        lower_bound=float(lower),
        suffix_spins=spins,
        complete=complete,
        per_target=per_target,
    )


def suggest_cut(
    net: Network,
    spin_budget: int,
    x0: np.ndarray,
    eps: float,
    label: int = 0,
    model: int = 1,
    segments: int = 2,
    bits_per_var: int = 6,
    bits_per_slack: int = 4,
    one_sided: bool = False,
    bounds: Optional[IntervalBounds] = None,
) -> int:
    """Smallest cut whose suffix QUBO fits in `spin_budget`; 0 when the whole network already fits."""
    if bounds is None:
        bounds = propagate(net, x0, eps)
    sizes = {0: query_spins(net, bounds, label, model, segments, bits_per_var, bits_per_slack, one_sided)}
    if sizes[0] <= spin_budget:
        return 0
    for cut in range(1, net.depth):
        suffix, suffix_bounds = prefix_box(net, bounds, cut)
        sizes[cut] = query_spins(
            suffix, suffix_bounds, label, model, segments, bits_per_var, bits_per_slack, one_sided
        )
        logger.debug(f"cut={cut}: suffix needs {sizes[cut]} spins")
        if sizes[cut] <= spin_budget:
            return cut
    raise SolverError(
        f"no cut fits a budget of {spin_budget} spins, the last layer alone needs {sizes[max(sizes)]}",
        payload={"spin_budget": spin_budget, "spins": sizes},
    )
