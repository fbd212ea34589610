"""Sound over-approximation of networks with arbitrary monotone activations.

Each neuron carries a lower and an upper pre-activation (z_lo <= z <= z_hi, propagated with sign-split weights)
and a lower/upper step function enclosing the activation on uniform segments. Minimizing the encoded objective
yields a certified lower bound on the true minimum; refining the segments closes the gap.
"""
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from core.errors import DegenerateSegmentError
from core.errors import EncodingError
from core.exact import solve_branch_and_bound
from core.intervals import IntervalBounds
from core.intervals import propagate
from core.intervals import segment_feasibility
from core.network import ActivationKind
from core.network import Network
from core.network import forward_eval
from core.pwl import DEGENERATE_WIDTH
from core.pwl import check_ball
from core.pwl import check_target
from core.system import MixedConstraintSystem
from core.system import RowBuilder
from core.system import VariableLayout

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StepBoundTable:
    breakpoints: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def n_segments(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def gap(self) -> float:
        """Largest vertical distance between the two step functions."""
        return float(np.max(self.upper - self.lower))

    @property
    def width(self) -> float:
        return float(np.max(np.diff(self.breakpoints)))


def build_step_table(act: ActivationKind, z_lo: float, z_hi: float, n_segments: int) -> StepBoundTable:
    if n_segments < 1:
        raise EncodingError(f"n_segments must be >= 1, got {n_segments}")
    if not z_hi - z_lo > DEGENERATE_WIDTH:
        raise DegenerateSegmentError(
            f"interval [{z_lo}, {z_hi}] has no width, the neuron must be treated as fixed",
            payload={"z_lo": z_lo, "z_hi": z_hi},
        )
    m = np.linspace(z_lo, z_hi, n_segments + 1)
    values = act.apply(m)
    # monotone non-decreasing: inf and sup of a segment sit at its ends
    return StepBoundTable(breakpoints=m, lower=values[:-1].copy(), upper=values[1:].copy())


def default_step_tables(
    net: Network, bounds: IntervalBounds, n_segments: int
) -> List[List[Optional[StepBoundTable]]]:
    tables = []
    for layer, spec in enumerate(net.layers):
        row: List[Optional[StepBoundTable]] = []
        for j in range(spec.rows):
            lo, hi = float(bounds.z_lo[layer][j]), float(bounds.z_hi[layer][j])
            row.append(None if hi - lo <= DEGENERATE_WIDTH else build_step_table(spec.activation, lo, hi, n_segments))
        tables.append(row)
    return tables


def _families(last: bool, j: int, y_true: int, y_target: Optional[int], one_sided: bool) -> List[str]:
    if not (last and one_sided):
        return ["lo", "hi"]
    if j == y_true:
        return ["lo"]
    if j == y_target:
        return ["hi"]
    return []


def build_model2(
    net: Network,
    x0: Optional[np.ndarray],
    eps: Optional[float],
    tables: Optional[Sequence[Sequence[Optional[StepBoundTable]]]],
    bounds: Optional[IntervalBounds],
    y_true: int,
    y_target: Optional[int],
    n_segments: int = 2,
    one_sided: bool = False,
    prune: bool = True,
) -> MixedConstraintSystem:
    """System whose optimum lower-bounds min over the input box of logit[y_true] - logit[y_target].

    Columns per layer are a_lo, a_hi, z_lo, z_hi (the lower/upper trajectories). In one-sided mode the output
    layer only keeps the lower trajectory of `y_true` and the upper trajectory of `y_target`, which is all the
    margin objective reads.
    """
    if bounds is None:
        raise EncodingError("interval bounds are required to place the breakpoints")
    check_ball(bounds, x0, eps)
    check_target(net, y_true, y_target)
    if tables is None:
        tables = default_step_tables(net, bounds, n_segments)

    depth = net.depth
    layout = VariableLayout()
    layout.add_block("x", 0, range(net.input_dim), bounds.input_lo, bounds.input_hi)
    kept: Dict[int, Dict[str, List[int]]] = {}
    for l, spec in enumerate(net.layers, start=1):
        last = l == depth
        kept[l] = {"lo": [], "hi": []}
        for j in range(spec.rows):
            for fam in _families(last, j, y_true, y_target, one_sided):
                kept[l][fam].append(j)
        zl, zh = bounds.z_lo[l - 1], bounds.z_hi[l - 1]
        al, ah = bounds.a_lo[l - 1], bounds.a_hi[l - 1]
        for fam in ("lo", "hi"):
            idx = kept[l][fam]
            layout.add_block(f"a_{fam}", l, idx, al[idx], ah[idx])
        for fam in ("lo", "hi"):
            idx = kept[l][fam]
            layout.add_block(f"z_{fam}", l, idx, zl[idx], zh[idx])

    groups = {}
    for l, spec in enumerate(net.layers, start=1):
        for fam in ("lo", "hi"):
            for j in kept[l][fam]:
                table = tables[l - 1][j]
                if table is None:
                    continue
                zl, zh = float(bounds.z_lo[l - 1][j]), float(bounds.z_hi[l - 1][j])
                feasible = segment_feasibility(zl, zh, table.breakpoints) if prune else np.ones(table.n_segments, bool)
                groups[(l, j, fam)] = layout.add_group(l, j, fam, feasible)

    eq = RowBuilder(layout.n_y, layout.n_beta)
    ineq = RowBuilder(layout.n_y, layout.n_beta)

    for k in range(net.input_dim):
        col = layout.col("x", 0, k)
        ineq.add({col: 1.0}, bounds.input_hi[k], kind="input")
        ineq.add({col: -1.0}, -bounds.input_lo[k], kind="input")

    def _prev(l: int, fam: str, k: int) -> int:
        if l == 1:
            return layout.col("x", 0, k)
        return layout.col(f"a_{fam}", l - 1, k)

    for l, spec in enumerate(net.layers, start=1):
        w = spec.weights
        for fam, other in (("lo", "hi"), ("hi", "lo")):
            for j in kept[l][fam]:
                # z_lo = W+ a_lo + W- a_hi + b and symmetrically for z_hi
                row = {layout.col(f"z_{fam}", l, j): 1.0}
                for k in range(spec.cols):
                    src = _prev(l, fam if w[j, k] >= 0 else other, k)
                    row[src] = row.get(src, 0.0) - w[j, k]
                eq.add(row, spec.bias[j], kind="pre")

        for fam in ("lo", "hi"):
            for j in kept[l][fam]:
                table = tables[l - 1][j]
                a_col = layout.col(f"a_{fam}", l, j)
                if table is None:
                    z_point = 0.5 * (bounds.z_lo[l - 1][j] + bounds.z_hi[l - 1][j])
                    eq.add({a_col: 1.0}, float(spec.activation.apply(np.array(z_point))), kind="act")
                    continue
                group = groups[(l, j, fam)]
                values = table.lower if fam == "lo" else table.upper
                eq.add({a_col: 1.0}, 0.0, {group.start + i: values[i] for i in range(table.n_segments)}, kind="act")

        for fam in ("lo", "hi"):
            for j in kept[l][fam]:
                table = tables[l - 1][j]
                if table is None:
                    continue
                group = groups[(l, j, fam)]
                eq.add({}, 1.0, {group.start + i: -1.0 for i in range(table.n_segments)}, kind="one-hot")

        for fam in ("lo", "hi"):
            for j in kept[l][fam]:
                table = tables[l - 1][j]
                if table is None:
                    continue
                group = groups[(l, j, fam)]
                z_col = layout.col(f"z_{fam}", l, j)
                m = table.breakpoints
                ineq.add({z_col: -1.0}, 0.0, {group.start + i: -m[i] for i in range(table.n_segments)}, kind="segment")
                upper = {group.start + i: m[i + 1] for i in range(table.n_segments)}
                ineq.add({z_col: 1.0}, 0.0, upper, kind="segment")

    A, b0, B, eq_kinds = eq.build()
    C, d0, D, ineq_kinds = ineq.build()
    c = np.zeros(layout.n_y)
    c[layout.col("a_lo", depth, y_true)] += 1.0
    if y_target is not None:
        c[layout.col("a_hi", depth, y_target)] -= 1.0

    system = MixedConstraintSystem(
        layout=layout,
        c=c,
        A=A,
        b0=b0,
        B=B,
        C=C,
        d0=d0,
        D=D,
        model=2,
        y_true=y_true,
        y_target=-1 if y_target is None else y_target,
        eq_kinds=eq_kinds,
        ineq_kinds=ineq_kinds,
        meta={"tables": tables, "one_sided": one_sided},
    )
    logger.debug(
        f"model 2 system: n_y={system.n_y} n_beta={system.n_beta} eq={len(b0)} ineq={len(d0)} "
        f"one_sided={one_sided}"
    )
    return system


def pair_objective(net: Network, x: np.ndarray, y_true: int, y_target: Optional[int]) -> float:
    """The quantity both encodings minimize, evaluated on the real network."""
    out = forward_eval(net, x)
    return float(out[y_true] - (out[y_target] if y_target is not None else 0.0))


@dataclass
class RefinementStep:
    n_segments: int
    lower_bound: float
    upper_bound: float
    step_gap: float

    @property
    def gap(self) -> float:
        return self.upper_bound - self.lower_bound

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_segments": self.n_segments,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "gap": self.gap,
            "step_gap": self.step_gap,
        }


@dataclass
class RefinementResult:
    system: MixedConstraintSystem
    lower_bound: float
    upper_bound: float
    n_used: int
    complete: bool
    best_input: Optional[np.ndarray] = None
    trajectory: List[RefinementStep] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.upper_bound - self.lower_bound

    def to_dict(self) -> Dict[str, Any]:
        return {
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "gap": self.gap,
            "n_used": self.n_used,
            "complete": self.complete,
            "trajectory": [step.to_dict() for step in self.trajectory],
        }


def refine_until(
    net: Network,
    x0: np.ndarray,
    eps: float,
    target_gap: float,
    n_start: int,
    n_max: int,
    y_true: int,
    y_target: Optional[int],
    one_sided: bool = True,
    bounds: Optional[IntervalBounds] = None,
) -> RefinementResult:
    """Doubles the segment count until upper - lower bound on the objective is within `target_gap`.

    The lower bound is the exact optimum of the step-bound system; the upper bound is the best objective replayed
    through the network at the decoded minimizers, so it is attained by a real input of the ball.
    """
    if target_gap <= 0:
        raise EncodingError(f"target_gap must be > 0, got {target_gap}")
    if n_start < 1 or n_max < n_start:
        raise EncodingError(f"need 1 <= n_start <= n_max, got {n_start}, {n_max}")
    x0 = np.asarray(x0, dtype=float)
    if bounds is None:
        bounds = propagate(net, x0, eps)

    upper = pair_objective(net, x0, y_true, y_target)
    best_input = x0
    trajectory: List[RefinementStep] = []
    n = n_start
    while True:
        tables = default_step_tables(net, bounds, n)
        system = build_model2(net, None, None, tables, bounds, y_true, y_target, one_sided=one_sided)
        solved = solve_branch_and_bound(system)
        lower = solved.lower_bound
        if solved.y is not None:
            x = np.clip(system.decode_input(solved.y), bounds.input_lo, bounds.input_hi)
            replay = pair_objective(net, x, y_true, y_target)
            if replay < upper:
                upper, best_input = replay, x
        step_gap = max((t.gap for row in tables for t in row if t is not None), default=0.0)
        trajectory.append(RefinementStep(n_segments=n, lower_bound=lower, upper_bound=upper, step_gap=step_gap))
        logger.debug(f"refinement n={n}: lower={lower:.6g} upper={upper:.6g} gap={upper - lower:.3g}")
        done = upper - lower <= target_gap
        if done or n * 2 > n_max:
            return RefinementResult(
                system=system,
                lower_bound=lower,
                upper_bound=upper,
                n_used=n,
                complete=done,
                best_input=best_input,
                trajectory=trajectory,
            )
        n *= 2
