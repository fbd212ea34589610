"""Interval bound propagation (IBP) and the segment feasibility test built on top of it."""
import logging
from dataclasses import dataclass
from typing import Any
from typing import Dict
from typing import List
from typing import Sequence

import numpy as np

from core.errors import BreakpointCoverageError
from core.errors import DimensionError
from core.network import Network

logger = logging.getLogger(__name__)

# Slack allowed when comparing an IBP interval against the outermost breakpoints
COVERAGE_TOL = 1e-9


@dataclass(frozen=True)
class IntervalBounds:
    input_lo: np.ndarray
    input_hi: np.ndarray
    z_lo: List[np.ndarray]
    z_hi: List[np.ndarray]
    a_lo: List[np.ndarray]
    a_hi: List[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.z_lo)

    def post_lo(self, layer: int) -> np.ndarray:
        """Lower bound on h_layer, layer 0 being the input box."""
        return self.input_lo if layer == 0 else self.a_lo[layer - 1]

    def post_hi(self, layer: int) -> np.ndarray:
        return self.input_hi if layer == 0 else self.a_hi[layer - 1]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input": {"lo": self.input_lo.tolist(), "hi": self.input_hi.tolist()},
            "layers": [
                {
                    "z_lo": zl.tolist(),
                    "z_hi": zh.tolist(),
                    "a_lo": al.tolist(),
                    "a_hi": ah.tolist(),
                }
                for zl, zh, al, ah in zip(self.z_lo, self.z_hi, self.a_lo, self.a_hi)
            ],
        }


def propagate_box(net: Network, lo: np.ndarray, hi: np.ndarray) -> IntervalBounds:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != (net.input_dim,) or hi.shape != (net.input_dim,):
        raise DimensionError(f"input box has shape {lo.shape}/{hi.shape}, layer 1 expects ({net.input_dim},)")
    if np.any(lo > hi):
        raise DimensionError("input box has lo > hi")

    z_lo, z_hi, a_lo, a_hi = [], [], [], []
    h_lo, h_hi = lo, hi
    for layer in net.layers:
        w_pos = np.maximum(layer.weights, 0.0)
        w_neg = np.minimum(layer.weights, 0.0)
        zl = w_pos @ h_lo + w_neg @ h_hi + layer.bias
        zh = w_pos @ h_hi + w_neg @ h_lo + layer.bias
        # every supported activation is monotone non-decreasing
        h_lo = layer.activation.apply(zl)
        h_hi = layer.activation.apply(zh)
        z_lo.append(zl)
        z_hi.append(zh)
        a_lo.append(h_lo)
        a_hi.append(h_hi)

    return IntervalBounds(input_lo=lo, input_hi=hi, z_lo=z_lo, z_hi=z_hi, a_lo=a_lo, a_hi=a_hi)


def propagate(net: Network, x0: np.ndarray, eps: float) -> IntervalBounds:
    """Sound outer box of every layer over the l-inf ball B(x0, eps)."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    x0 = np.asarray(x0, dtype=float)
    return propagate_box(net, x0 - eps, x0 + eps)


def segment_feasibility(z_lo: float, z_hi: float, breakpoints: np.ndarray) -> np.ndarray:
    """Marks segment i infeasible exactly when z_hi < M_{i-1} or z_lo > M_i."""
    m = np.asarray(breakpoints, dtype=float)
    if z_lo < m[0] - COVERAGE_TOL or z_hi > m[-1] + COVERAGE_TOL:
        raise BreakpointCoverageError(
            f"interval [{z_lo}, {z_hi}] escapes breakpoints [{m[0]}, {m[-1]}], widen the outermost breakpoints",
            payload={"z_lo": float(z_lo), "z_hi": float(z_hi), "m_lo": float(m[0]), "m_hi": float(m[-1])},
        )
    return ~((z_hi < m[:-1]) | (z_lo > m[1:]))


def feasible_segments(bounds: IntervalBounds, tables: Sequence[Any]) -> List[List[np.ndarray]]:
    """Per layer, per neuron boolean mask over the segments of its table.

    `tables[l]` is either one table shared by the whole layer or a sequence with one table per neuron; tables
    only need a `breakpoints` attribute.
    """
    out = []
    for layer, layer_tables in enumerate(tables):
        zl, zh = bounds.z_lo[layer], bounds.z_hi[layer]
        per_neuron = layer_tables if isinstance(layer_tables, (list, tuple)) else [layer_tables] * len(zl)
        out.append(
            [segment_feasibility(zl[j], zh[j], per_neuron[j].breakpoints) for j in range(len(zl))]
        )
    return out


def activation_sup_bounds(bounds: IntervalBounds) -> List[float]:
    """[H_0, ..., H_L] with H_l >= sup ||h_l||_inf over the box."""
    return [
        float(np.max(np.maximum(np.abs(bounds.post_lo(layer)), np.abs(bounds.post_hi(layer)))))
        for layer in range(bounds.depth + 1)
    ]


def certify_ibp(bounds: IntervalBounds, label: int) -> bool:
    """True when the lower bound of logit `label` beats the upper bound of every other logit."""
    lo = bounds.a_lo[-1]
    hi = np.delete(bounds.a_hi[-1], label)
    return bool(lo[label] > np.max(hi))
