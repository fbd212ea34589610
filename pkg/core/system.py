"""Mixed binary/continuous constraint systems shared by both encodings.

A system reads

    min  c.y + offset
    s.t. A y  = b0 + B beta
         C y <= d0 + D beta
         lo <= y <= hi,  beta one-hot per group, fixed betas = 0

and is what the QUBO builder, the exact solver and the Benders loop consume.
"""
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from core.errors import DimensionError


class Block(NamedTuple):
    name: str
    layer: int
    neurons: Tuple[int, ...]
    start: int

    @property
    def size(self) -> int:
        return len(self.neurons)


class BetaGroup(NamedTuple):
    """The selectors of one neuron (and one bound family for the step-bound model)."""

    layer: int
    neuron: int
    family: str
    start: int
    size: int

    @property
    def columns(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.size)


class VariableLayout:
    """Column map for y and beta, plus per-column boxes."""

    def __init__(self) -> None:
        self.blocks: List[Block] = []
        self._index: Dict[Tuple[str, int], Block] = {}
        self._lo: List[float] = []
        self._hi: List[float] = []
        self.groups: List[BetaGroup] = []
        self._fixed: List[bool] = []

    def add_block(
        self, name: str, layer: int, neurons: Sequence[int], lo: Sequence[float], hi: Sequence[float]
    ) -> Block:
        block = Block(name=name, layer=layer, neurons=tuple(int(j) for j in neurons), start=len(self._lo))
        if len(lo) != block.size or len(hi) != block.size:
            raise DimensionError(f"block {name}^{layer} has {block.size} columns but {len(lo)}/{len(hi)} bounds")
        self.blocks.append(block)
        self._index[(name, layer)] = block
        self._lo.extend(float(v) for v in lo)
        self._hi.extend(float(v) for v in hi)
        return block

    def add_group(self, layer: int, neuron: int, family: str, feasible: Sequence[bool]) -> BetaGroup:
        group = BetaGroup(layer=layer, neuron=neuron, family=family, start=len(self._fixed), size=len(feasible))
        self.groups.append(group)
        self._fixed.extend(not bool(f) for f in feasible)
        return group

    def has(self, name: str, layer: int) -> bool:
        return (name, layer) in self._index

    def block(self, name: str, layer: int) -> Block:
        return self._index[(name, layer)]

    def col(self, name: str, layer: int, neuron: int) -> int:
        block = self._index[(name, layer)]
        return block.start + block.neurons.index(neuron)

    def has_col(self, name: str, layer: int, neuron: int) -> bool:
        block = self._index.get((name, layer))
        return block is not None and neuron in block.neurons

    @property
    def n_y(self) -> int:
        return len(self._lo)

    @property
    def n_beta(self) -> int:
        return len(self._fixed)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self._lo)

    @property
    def hi(self) -> np.ndarray:
        return np.array(self._hi)

    @property
    def fixed_beta(self) -> np.ndarray:
        return np.array(self._fixed, dtype=bool)

    def column_names(self) -> List[str]:
        names = []
        for block in self.blocks:
            names.extend(f"{block.name}^{block.layer}_{j}" for j in block.neurons)
        return names


@dataclass
class MixedConstraintSystem:
    layout: VariableLayout
    c: np.ndarray
    A: np.ndarray
    b0: np.ndarray
    B: np.ndarray
    C: np.ndarray
    d0: np.ndarray
    D: np.ndarray
    model: int
    y_true: int
    y_target: int
    offset: float = 0.0
    eq_kinds: List[str] = field(default_factory=list)
    ineq_kinds: List[str] = field(default_factory=list)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def n_y(self) -> int:
        return self.layout.n_y

    @property
    def n_beta(self) -> int:
        return self.layout.n_beta

    @property
    def lo(self) -> np.ndarray:
        return self.layout.lo

    @property
    def hi(self) -> np.ndarray:
        return self.layout.hi

    @property
    def one_hot_groups(self) -> List[np.ndarray]:
        return [g.columns for g in self.layout.groups]

    @property
    def fixed_beta(self) -> np.ndarray:
        return self.layout.fixed_beta

    @property
    def input_columns(self) -> np.ndarray:
        block = self.layout.block("x", 0)
        return np.arange(block.start, block.start + block.size)

    def count(self, kind: str) -> int:
        return self.eq_kinds.count(kind) + self.ineq_kinds.count(kind)

    def objective(self, y: np.ndarray) -> float:
        return float(self.c @ y + self.offset)

    def sp_rhs(self, beta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(b0 + B beta, d0 + D beta), the right-hand sides of SP(beta)."""
        beta = np.asarray(beta, dtype=float)
        return self.b0 + self.B @ beta, self.d0 + self.D @ beta

    def decode_input(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y)[self.input_columns]

    def beta_space_size(self) -> int:
        """Number of one-hot-valid assignments over the non-fixed selectors."""
        fixed = self.fixed_beta
        size = 1
        for cols in self.one_hot_groups:
            size *= int(np.sum(~fixed[cols]))
        return size

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "y_true": self.y_true,
            "y_target": self.y_target,
            "columns": self.layout.column_names(),
            "lo": self.lo.tolist(),
            "hi": self.hi.tolist(),
            "c": self.c.tolist(),
            "offset": self.offset,
            "A": self.A.tolist(),
            "b0": self.b0.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
            "d0": self.d0.tolist(),
            "D": self.D.tolist(),
            "eq_kinds": self.eq_kinds,
            "ineq_kinds": self.ineq_kinds,
            "one_hot_groups": [cols.tolist() for cols in self.one_hot_groups],
            "fixed_beta": np.flatnonzero(self.fixed_beta).tolist(),
        }


class RowBuilder:
    """Accumulates sparse-ish rows before they are stacked into dense matrices."""

    def __init__(self, n_y: int, n_beta: int) -> None:
        self.n_y = n_y
        self.n_beta = n_beta
        self._rows: List[Tuple[Dict[int, float], float, Dict[int, float], str]] = []

    def add(
        self,
        y_coefs: Dict[int, float],
        rhs: float,
        beta_coefs: Optional[Dict[int, float]] = None,
        kind: str = "",
    ) -> None:
        self._rows.append((y_coefs, float(rhs), beta_coefs or {}, kind))

    def __len__(self) -> int:
        return len(self._rows)

    def build(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[str]]:
        m = len(self._rows)
        lhs = np.zeros((m, self.n_y))
        rhs = np.zeros(m)
        coupling = np.zeros((m, self.n_beta))
        kinds = []
        for i, (y_coefs, r, beta_coefs, kind) in enumerate(self._rows):
            for col, v in y_coefs.items():
                lhs[i, col] += v
            for col, v in beta_coefs.items():
                coupling[i, col] += v
            rhs[i] = r
            kinds.append(kind)
        return lhs, rhs, coupling, kinds


class Feasibility(NamedTuple):
    objective: float
    max_violation: float


def eval_feasible(system: MixedConstraintSystem, y: np.ndarray, beta: np.ndarray) -> Feasibility:
    """Objective and max signed violation of every constraint (equalities, inequalities, boxes, selectors)."""
    y = np.asarray(y, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if y.shape != (system.n_y,) or beta.shape != (system.n_beta,):
        raise DimensionError(
            f"expected y of length {system.n_y} and beta of length {system.n_beta}, got {y.shape}, {beta.shape}"
        )
    b, d = system.sp_rhs(beta)
    violations = [0.0]
    if len(b):
        violations.append(float(np.max(np.abs(system.A @ y - b))))
    if len(d):
        violations.append(float(np.max(system.C @ y - d)))
    violations.append(float(np.max(system.lo - y, initial=0.0)))
    violations.append(float(np.max(y - system.hi, initial=0.0)))
    if system.n_beta:
        violations.append(float(np.max(np.minimum(np.abs(beta), np.abs(beta - 1.0)))))
        violations.append(float(np.max(np.abs(beta[system.fixed_beta]), initial=0.0)))
    return Feasibility(objective=system.objective(y), max_violation=max(violations))
