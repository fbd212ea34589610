"""Exact encoding of piecewise-linear networks (relu, hardtanh) as a mixed constraint system.

Every neuron gets one selector per segment of its table, the activation is rewritten as
a = sum_i (alpha_i u_i + gamma_i beta_i) with u_i = beta_i z linearized by big-M rows.
"""
import logging
from dataclasses import dataclass
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from core.errors import DegenerateSegmentError
from core.errors import EncodingError
from core.errors import UnsupportedActivationError
from core.intervals import IntervalBounds
from core.intervals import segment_feasibility
from core.network import ActivationKind
from core.network import Network
from core.system import MixedConstraintSystem
from core.system import RowBuilder
from core.system import VariableLayout

logger = logging.getLogger(__name__)

# Neurons whose IBP interval is narrower than this are treated as constants
DEGENERATE_WIDTH = 1e-12


@dataclass(frozen=True)
class SegmentTable:
    breakpoints: np.ndarray
    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self) -> None:
        if len(self.breakpoints) < 2 or np.any(np.diff(self.breakpoints) <= 0):
            raise EncodingError(f"breakpoints must be strictly increasing, got {self.breakpoints.tolist()}")
        if len(self.slopes) != self.n_segments or len(self.intercepts) != self.n_segments:
            raise EncodingError("one slope and one intercept per segment are required")

    @property
    def n_segments(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def lower(self) -> float:
        return float(self.breakpoints[0])

    @property
    def upper(self) -> float:
        return float(self.breakpoints[-1])

    def segment_of(self, z: float) -> int:
        return int(np.clip(np.searchsorted(self.breakpoints, z, side="right") - 1, 0, self.n_segments - 1))

    def value(self, z: float) -> float:
        i = self.segment_of(z)
        return float(self.slopes[i] * z + self.intercepts[i])


def _piece(act: ActivationKind, lo: float, hi: float) -> tuple:
    mid = 0.5 * (lo + hi)
    if act is ActivationKind.RELU:
        return (1.0, 0.0) if mid > 0 else (0.0, 0.0)
    if act is ActivationKind.HARDTANH:
        if mid < -1.0:
            return (0.0, -1.0)
        if mid > 1.0:
            return (0.0, 1.0)
        return (1.0, 0.0)
    return (1.0, 0.0)


def build_segment_table_pwl(act: ActivationKind, z_lo: float, z_hi: float, min_segments: int = 1) -> SegmentTable:
    """Minimal exact table over [z_lo, z_hi]: the kinks of `act` inside the range plus both ends.

    `min_segments` splits the widest segment in two until the count is reached, which keeps the table exact.
    """
    if not act.is_piecewise_linear:
        raise UnsupportedActivationError(f"{act.value} is not piecewise-linear, use the step-bound encoding")
    if not z_hi - z_lo > DEGENERATE_WIDTH:
        raise DegenerateSegmentError(
            f"interval [{z_lo}, {z_hi}] has no width, the neuron must be treated as fixed",
            payload={"z_lo": z_lo, "z_hi": z_hi},
        )
    kinks = {ActivationKind.RELU: [0.0], ActivationKind.HARDTANH: [-1.0, 1.0]}.get(act, [])
    points = [z_lo] + [k for k in kinks if z_lo < k < z_hi] + [z_hi]
    while len(points) - 1 < min_segments:
        widest = int(np.argmax(np.diff(points)))
        points.insert(widest + 1, 0.5 * (points[widest] + points[widest + 1]))
    pieces = [_piece(act, lo, hi) for lo, hi in zip(points[:-1], points[1:])]
    return SegmentTable(
        breakpoints=np.array(points, dtype=float),
        slopes=np.array([p[0] for p in pieces]),
        intercepts=np.array([p[1] for p in pieces]),
    )


def default_tables(net: Network, bounds: IntervalBounds, min_segments: int = 1) -> List[List[Optional[SegmentTable]]]:
    """One minimal table per neuron, `None` for degenerate neurons."""
    tables = []
    for layer, spec in enumerate(net.layers):
        row: List[Optional[SegmentTable]] = []
        for j in range(spec.rows):
            lo, hi = float(bounds.z_lo[layer][j]), float(bounds.z_hi[layer][j])
            row.append(
                None if hi - lo <= DEGENERATE_WIDTH else build_segment_table_pwl(spec.activation, lo, hi, min_segments)
            )
        tables.append(row)
    return tables


def check_ball(bounds: IntervalBounds, x0: Optional[np.ndarray], eps: Optional[float]) -> None:
    if x0 is None or eps is None:
        return
    x0 = np.asarray(x0, dtype=float)
    if not (np.allclose(bounds.input_lo, x0 - eps) and np.allclose(bounds.input_hi, x0 + eps)):
        raise EncodingError("bounds were not propagated from the ball B(x0, eps)")


def check_target(net: Network, y_true: int, y_target: Optional[int]) -> None:
    k = net.output_dim
    if not 0 <= y_true < k:
        raise EncodingError(f"y_true={y_true} outside [0, {k})")
    if y_target is None:
        if k != 1:
            raise EncodingError("a target class is required for networks with more than one logit")
        return
    if y_target == y_true:
        raise EncodingError(f"target class must differ from the true class ({y_true})")
    if not 0 <= y_target < k:
        raise EncodingError(f"y_target={y_target} outside [0, {k})")


def build_model1(
    net: Network,
    x0: Optional[np.ndarray],
    eps: Optional[float],
    tables: Optional[Sequence[Sequence[Optional[SegmentTable]]]],
    bounds: Optional[IntervalBounds],
    y_true: int,
    y_target: Optional[int],
    prune: bool = True,
) -> MixedConstraintSystem:
    """Exact system whose optimum is min over the input box of logit[y_true] - logit[y_target].

    With a single-logit network and `y_target=None`, the objective is the output itself.
    """
    if bounds is None:
        raise EncodingError("interval bounds are required to size the big-M constants")
    check_ball(bounds, x0, eps)
    check_target(net, y_true, y_target)
    for layer in net.layers:
        if not layer.activation.is_piecewise_linear:
            raise UnsupportedActivationError(
                f"model 1 needs piecewise-linear activations, got {layer.activation.value}"
            )
    if tables is None:
        tables = default_tables(net, bounds)

    layout = VariableLayout()
    layout.add_block("x", 0, range(net.input_dim), bounds.input_lo, bounds.input_hi)
    u_cols = {}
    for l, spec in enumerate(net.layers, start=1):
        n = spec.rows
        zl, zh = bounds.z_lo[l - 1], bounds.z_hi[l - 1]
        layout.add_block("a", l, range(n), bounds.a_lo[l - 1], bounds.a_hi[l - 1])
        layout.add_block("z", l, range(n), zl, zh)
        u_lo, u_hi, keys = [], [], []
        for j in range(n):
            table = tables[l - 1][j]
            if table is None:
                continue
            for i in range(table.n_segments):
                keys.append((j, i))
                u_lo.append(min(0.0, zl[j]))
                u_hi.append(max(0.0, zh[j]))
        block = layout.add_block("u", l, range(len(keys)), u_lo, u_hi)
        for pos, key in enumerate(keys):
            u_cols[(l,) + key] = block.start + pos

    groups = {}
    for l, spec in enumerate(net.layers, start=1):
        for j in range(spec.rows):
            table = tables[l - 1][j]
            if table is None:
                continue
            zl, zh = float(bounds.z_lo[l - 1][j]), float(bounds.z_hi[l - 1][j])
            feasible = segment_feasibility(zl, zh, table.breakpoints) if prune else np.ones(table.n_segments, bool)
            groups[(l, j)] = layout.add_group(l, j, "beta", feasible)

    eq = RowBuilder(layout.n_y, layout.n_beta)
    ineq = RowBuilder(layout.n_y, layout.n_beta)

    for k in range(net.input_dim):
        col = layout.col("x", 0, k)
        ineq.add({col: 1.0}, bounds.input_hi[k], kind="input")
        ineq.add({col: -1.0}, -bounds.input_lo[k], kind="input")

    for l, spec in enumerate(net.layers, start=1):
        prev = "x" if l == 1 else "a"
        for j in range(spec.rows):
            row = {layout.col("z", l, j): 1.0}
            for k in range(spec.cols):
                c = layout.col(prev, l - 1, k)
                row[c] = row.get(c, 0.0) - spec.weights[j, k]
            eq.add(row, spec.bias[j], kind="pre")

        for j in range(spec.rows):
            table = tables[l - 1][j]
            a_col, z_col = layout.col("a", l, j), layout.col("z", l, j)
            if table is None:
                z_point = 0.5 * (bounds.z_lo[l - 1][j] + bounds.z_hi[l - 1][j])
                eq.add({a_col: 1.0}, float(spec.activation.apply(np.array(z_point))), kind="act")
                continue
            group = groups[(l, j)]
            row = {a_col: 1.0}
            for i in range(table.n_segments):
                row[u_cols[(l, j, i)]] = -table.slopes[i]
            eq.add(row, 0.0, {group.start + i: table.intercepts[i] for i in range(table.n_segments)}, kind="act")

        for j in range(spec.rows):
            table = tables[l - 1][j]
            if table is None:
                continue
            group = groups[(l, j)]
            eq.add({}, 1.0, {group.start + i: -1.0 for i in range(table.n_segments)}, kind="one-hot")

        for j in range(spec.rows):
            table = tables[l - 1][j]
            if table is None:
                continue
            group = groups[(l, j)]
            z_col = layout.col("z", l, j)
            m = table.breakpoints
            ineq.add({z_col: -1.0}, 0.0, {group.start + i: -m[i] for i in range(table.n_segments)}, kind="segment")
            ineq.add({z_col: 1.0}, 0.0, {group.start + i: m[i + 1] for i in range(table.n_segments)}, kind="segment")

        for j in range(spec.rows):
            table = tables[l - 1][j]
            if table is None:
                continue
            group = groups[(l, j)]
            z_col = layout.col("z", l, j)
            m_lo, m_hi = float(bounds.z_lo[l - 1][j]), float(bounds.z_hi[l - 1][j])
            for i in range(table.n_segments):
                u, b = u_cols[(l, j, i)], group.start + i
                ineq.add({u: 1.0}, 0.0, {b: m_hi}, kind="big-m")
                ineq.add({u: -1.0}, 0.0, {b: -m_lo}, kind="big-m")
                ineq.add({u: 1.0, z_col: -1.0}, -m_lo, {b: m_lo}, kind="big-m")
                ineq.add({u: -1.0, z_col: 1.0}, m_hi, {b: -m_hi}, kind="big-m")

    A, b0, B, eq_kinds = eq.build()
    C, d0, D, ineq_kinds = ineq.build()
    c = np.zeros(layout.n_y)
    last = net.depth
    c[layout.col("a", last, y_true)] += 1.0
    if y_target is not None:
        c[layout.col("a", last, y_target)] -= 1.0

    system = MixedConstraintSystem(
        layout=layout,
        c=c,
        A=A,
        b0=b0,
        B=B,
        C=C,
        d0=d0,
        D=D,
        model=1,
        y_true=y_true,
        y_target=-1 if y_target is None else y_target,
        eq_kinds=eq_kinds,
        ineq_kinds=ineq_kinds,
        meta={"tables": tables},
    )
    logger.debug(
        f"model 1 system: n_y={system.n_y} n_beta={system.n_beta} eq={len(b0)} ineq={len(d0)} "
        f"fixed={int(np.sum(system.fixed_beta))}"
    )
    return system
