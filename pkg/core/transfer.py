"""Robustness transfer from a pruned network g back to the original f.

With tau >= sup over the ball of |f(x) - g(x)|_inf, the margin is 2-Lipschitz in the logits, so
Phi_g - 2 tau <= Phi_f <= Phi_g + 2 tau and any verifier bounds [L_g, U_g] on Phi_g carry over.
"""
import logging
from dataclasses import asdict
from dataclasses import dataclass
from enum import Enum
from enum import unique
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from core.errors import DatasetError
from core.errors import EncodingError
from core.errors import ShapeMismatchError
from core.intervals import activation_sup_bounds
from core.intervals import propagate
from core.network import Network
from core.network import PruneMask
from core.network import Sample
from core.network import apply_mask
from core.network import op_norm_inf
from core.network import removed_row_mass

logger = logging.getLogger(__name__)


@unique
class TransferVerdict(Enum):
    CERTIFIED_ROBUST = "certified-robust"
    CERTIFIED_NONROBUST = "certified-nonrobust"
    UNDECIDED = "undecided"


@dataclass(frozen=True)
class TransferBounds:
    lower: float
    upper: float
    verdict: TransferVerdict


@dataclass(frozen=True)
class TransferCertificate:
    index: int
    tau: float
    lower_g: float
    upper_g: float
    lower_f: float
    upper_f: float
    verdict: TransferVerdict

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d


def compute_tau(net: Network, pruned: Network, residuals: Sequence[np.ndarray], H: Sequence[float]) -> float:
    """tau = sum_l (prod_{j>=l} Lip_j) (prod_{j>l} |W'_j|) |dW_l| H_{l-1}, with induced inf-norms.

    `H[l]` bounds |h_l|_inf of the original network over the ball (H[0] is the input box); an identity output
    layer contributes Lipschitz constant 1.
    """
    if len(residuals) != net.depth or pruned.depth != net.depth:
        raise ShapeMismatchError(f"expected {net.depth} residuals, got {len(residuals)}")
    if len(H) < net.depth:
        raise ShapeMismatchError(f"expected {net.depth} activation bounds, got {len(H)}")
    tau = 0.0
    for l in range(net.depth):
        if residuals[l].shape != net.layers[l].weights.shape:
            raise ShapeMismatchError(f"residual {l + 1} has shape {residuals[l].shape}", payload={"layer": l + 1})
        term = op_norm_inf(residuals[l]) * H[l] * net.layers[l].activation.lipschitz
        for j in range(l + 1, net.depth):
            term *= op_norm_inf(pruned.layers[j].weights) * net.layers[j].activation.lipschitz
        tau += term
    return float(tau)


def transfer_margin_bounds(lower_g: float, upper_g: float, tau: float) -> TransferBounds:
    if lower_g > upper_g:
        raise EncodingError(f"lower bound {lower_g} exceeds upper bound {upper_g}")
    if tau < 0:
        raise EncodingError(f"tau must be >= 0, got {tau}")
    if lower_g > 2 * tau:
        verdict = TransferVerdict.CERTIFIED_ROBUST
    elif upper_g <= -2 * tau:
        verdict = TransferVerdict.CERTIFIED_NONROBUST
    else:
        verdict = TransferVerdict.UNDECIDED
    return TransferBounds(lower=lower_g - 2 * tau, upper=upper_g + 2 * tau, verdict=verdict)


def dataset_bounds(results: Sequence[Tuple[float, float, float]]) -> Tuple[float, float]:
    """(CA lower, CA upper) from one (L_g, U_g, tau) triple per sample."""
    if not results:
        raise DatasetError("dataset bounds need at least one sample")
    robust = sum(1 for lower, _, tau in results if lower > 2 * tau)
    nonrobust = sum(1 for _, upper, tau in results if upper <= -2 * tau)
    n = len(results)
    return robust / n, 1.0 - nonrobust / n


@dataclass
class TransferReport:
    certificates: List[TransferCertificate]
    ca_lower: float
    ca_upper: float
    removed_row_mass: List[float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "certificates": [c.to_dict() for c in self.certificates],
            "ca_lower": self.ca_lower,
            "ca_upper": self.ca_upper,
            "removed_row_mass": self.removed_row_mass,
        }


# (pruned net, sample, eps) -> (L_g, U_g)
MarginVerifier = Callable[[Network, Sample, float], Tuple[float, float]]


def transfer_campaign(
    net: Network,
    mask: PruneMask,
    samples: Sequence[Sample],
    eps: float,
    verifier: MarginVerifier,
) -> TransferReport:
    """Verifies the pruned network once per sample and transfers the bounds to the original one.

    H comes from interval propagation on the original network, whose trajectory the error bound follows.
    """
    pruned, residuals = apply_mask(net, mask)
    certificates = []
    for index, sample in enumerate(samples):
        sample.check(net)
        H = activation_sup_bounds(propagate(net, sample.x0, eps))
        tau = compute_tau(net, pruned, residuals, H)
        lower_g, upper_g = verifier(pruned, sample, eps)
        bounds = transfer_margin_bounds(lower_g, max(lower_g, upper_g), tau)
        certificates.append(
            TransferCertificate(
                index=index,
                tau=tau,
                lower_g=lower_g,
                upper_g=upper_g,
                lower_f=bounds.lower,
                upper_f=bounds.upper,
                verdict=bounds.verdict,
            )
        )
        logger.info(f"transfer sample={index} tau={tau:.4g} L_g={lower_g:.4g} U_g={upper_g:.4g} {bounds.verdict.value}")
    ca_lower, ca_upper = dataset_bounds([(c.lower_g, c.upper_g, c.tau) for c in certificates])
    return TransferReport(
        certificates=certificates,
        ca_lower=ca_lower,
        ca_upper=ca_upper,
        removed_row_mass=removed_row_mass(residuals),
    )
