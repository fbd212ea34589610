"""Benders decomposition over the selectors of a `MixedConstraintSystem`.

The master picks a one-hot beta minimizing theta under the accumulated cuts, the subproblem SP(beta) is an LP in
y whose duals (or Farkas ray) give the next cut:

    optimality:  theta >= const + coefs.beta
    feasibility: const + coefs.beta <= 0
"""
import logging
import time
from dataclasses import dataclass
from dataclasses import field
from enum import Enum
from enum import unique
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from core.anneal import AnnealConfig
from core.anneal import solve_sa
from core.errors import InvariantViolation
from core.errors import SolverError
from core.exact import box_lower_bound
from core.exact import solve_sp
from core.lp import LpSolution
from core.lp import LpStatus
from core.qubo import assemble
from core.qubo import choose_rho
from core.qubo import decode
from core.qubo import make_encoding
from core.system import MixedConstraintSystem
from core.system import RowBuilder
from core.system import VariableLayout

logger = logging.getLogger(__name__)

MASTER_CAP = 1 << 20
CUT_TOL = 1e-6
FEASIBILITY_CUT_TOL = 1e-9
_CHUNK = 1 << 16


@unique
class CutKind(Enum):
    OPTIMALITY = "optimality"
    FEASIBILITY = "feasibility"


@unique
class MasterMode(Enum):
    EXHAUSTIVE = "exhaustive"
    ANNEAL = "anneal"


@dataclass(frozen=True)
class BendersCut:
    kind: CutKind
    constant: float
    coefs: np.ndarray
    beta: np.ndarray

    def evaluate(self, beta: np.ndarray) -> float:
        return float(self.constant + self.coefs @ beta)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "constant": self.constant,
            "coefs": self.coefs.tolist(),
            "beta": np.flatnonzero(self.beta).tolist(),
        }


@dataclass
class BendersState:
    cuts: List[BendersCut] = field(default_factory=list)
    lower_bound: float = -np.inf
    upper_bound: float = np.inf
    incumbent_beta: Optional[np.ndarray] = None
    incumbent_y: Optional[np.ndarray] = None
    iterations: int = 0
    trail: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.upper_bound - self.lower_bound

    def raise_lower(self, value: float) -> None:
        self.lower_bound = max(self.lower_bound, value)

    def offer(self, value: float, beta: np.ndarray, y: np.ndarray) -> None:
        if value < self.upper_bound:
            self.upper_bound, self.incumbent_beta, self.incumbent_y = value, beta, y


@dataclass
class SubproblemResult:
    lp: LpSolution
    cut: BendersCut

    @property
    def value(self) -> float:
        return self.cut.evaluate(self.cut.beta) if self.lp.optimal else np.inf


@dataclass
class MasterResult:
    beta: Optional[np.ndarray]
    theta: float
    feasible: bool
    exact: bool


@dataclass
class BendersResult:
    status: str
    optimum: float
    lower_bound: float
    upper_bound: float
    beta: Optional[np.ndarray]
    y: Optional[np.ndarray]
    iterations: int
    cuts: List[BendersCut]
    trail: List[Dict[str, Any]]

    @property
    def complete(self) -> bool:
        return self.status == "optimal"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "optimum": self.optimum,
            "lower_bound": self.lower_bound,
            "upper_bound": self.upper_bound,
            "iterations": self.iterations,
            "beta": None if self.beta is None else np.flatnonzero(self.beta).tolist(),
            "cuts": [cut.to_dict() for cut in self.cuts],
            "trail": self.trail,
        }


def _cut_from_duals(system: MixedConstraintSystem, pi: np.ndarray, lam: np.ndarray) -> Tuple[float, np.ndarray]:
    m_c, n = system.C.shape[0], system.n_y
    lam_c, lam_hi, lam_lo = lam[:m_c], lam[m_c:m_c + n], lam[m_c + n:]
    constant = float(system.b0 @ pi - system.d0 @ lam_c - system.hi @ lam_hi + system.lo @ lam_lo)
    coefs = system.B.T @ pi - system.D.T @ lam_c
    return constant, coefs


def subproblem(system: MixedConstraintSystem, beta: np.ndarray) -> SubproblemResult:
    beta = np.asarray(beta, dtype=float)
    sol = solve_sp(system, beta)
    if sol.status is LpStatus.UNBOUNDED:
        raise InvariantViolation("SP(beta) is unbounded although every column is boxed")
    if sol.optimal:
        constant, coefs = _cut_from_duals(system, sol.pi, sol.lam)
        cut = BendersCut(CutKind.OPTIMALITY, constant + system.offset, coefs, beta)
        value = sol.objective + system.offset
        if abs(cut.evaluate(beta) - value) > CUT_TOL * (1.0 + abs(value)):
            raise InvariantViolation(
                f"optimality cut gives {cut.evaluate(beta)} at its own beta, SP(beta) = {value}",
                payload={"beta": np.flatnonzero(beta).tolist()},
            )
    else:
        constant, coefs = _cut_from_duals(system, sol.ray_pi, sol.ray_lam)
        cut = BendersCut(CutKind.FEASIBILITY, constant, coefs, beta)
        if not cut.evaluate(beta) > 0:
            raise InvariantViolation(
                f"feasibility cut does not separate its own beta (value {cut.evaluate(beta)})",
                payload={"beta": np.flatnonzero(beta).tolist()},
            )
    return SubproblemResult(lp=sol, cut=cut)


def _split(cuts: Sequence[BendersCut], n_beta: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    opt = [c for c in cuts if c.kind is CutKind.OPTIMALITY]
    feas = [c for c in cuts if c.kind is CutKind.FEASIBILITY]

    def _stack(group: List[BendersCut]) -> Tuple[np.ndarray, np.ndarray]:
        if not group:
            return np.zeros(0), np.zeros((0, n_beta))
        return np.array([c.constant for c in group]), np.vstack([c.coefs for c in group])

    return _stack(opt) + _stack(feas)


def _open_groups(one_hot_groups: Sequence[np.ndarray], fixed_betas: np.ndarray) -> List[np.ndarray]:
    return [np.asarray(cols)[~fixed_betas[cols]] for cols in one_hot_groups]


def _master_exhaustive(
    cuts: Sequence[BendersCut], groups: List[np.ndarray], n_beta: int, lower_bound: float
) -> MasterResult:
    sizes = [len(g) for g in groups]
    total = int(np.prod(sizes)) if groups else 1
    if any(s == 0 for s in sizes):
        return MasterResult(beta=None, theta=np.inf, feasible=False, exact=True)
    if total > MASTER_CAP:
        raise SolverError(f"master space of {total} assignments exceeds {MASTER_CAP}", payload={"size": total})
    opt_c, opt_a, feas_c, feas_a = _split(cuts, n_beta)
    best_theta, best_index = np.inf, -1
    for start in range(0, total, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, total))
        digits = []
        rest = idx.copy()
        for size in reversed(sizes):
            digits.append(rest % size)
            rest //= size
        digits.reverse()
        chosen = [g[d] for g, d in zip(groups, digits)]
        theta = np.full(len(idx), lower_bound)
        if len(opt_c):
            values = opt_c[:, None] + sum(opt_a[:, cols] for cols in chosen)
            theta = np.maximum(theta, values.max(axis=0))
        feasible = np.ones(len(idx), dtype=bool)
        if len(feas_c):
            values = feas_c[:, None] + sum(feas_a[:, cols] for cols in chosen)
            feasible = np.all(values <= FEASIBILITY_CUT_TOL, axis=0)
        theta = np.where(feasible, theta, np.inf)
        k = int(np.argmin(theta))
        if theta[k] < best_theta:
            best_theta, best_index = float(theta[k]), int(idx[k])
    if best_index < 0:
        return MasterResult(beta=None, theta=np.inf, feasible=False, exact=True)
    beta = np.zeros(n_beta)
    rest = best_index
    for g, size in zip(reversed(groups), reversed(sizes)):
        beta[g[rest % size]] = 1.0
        rest //= size
    return MasterResult(beta=beta, theta=best_theta, feasible=True, exact=True)


def master_system(
    cuts: Sequence[BendersCut],
    groups: List[np.ndarray],
    theta_lo: float,
    theta_hi: float,
) -> Tuple[MixedConstraintSystem, np.ndarray]:
    """The epigraph master as a one-column system (theta) that the QUBO builder can lower.

    Only open selectors become master columns; the second value maps them back to the original beta indices.
    """
    column_map = np.concatenate(groups) if groups else np.zeros(0, dtype=int)
    layout = VariableLayout()
    layout.add_block("theta", 0, [0], [theta_lo], [theta_hi])
    start = 0
    eq = RowBuilder(1, len(column_map))
    for g, cols in enumerate(groups):
        layout.add_group(0, g, "beta", [True] * len(cols))
        eq.add({}, 1.0, {start + i: -1.0 for i in range(len(cols))}, kind="one-hot")
        start += len(cols)
    ineq = RowBuilder(1, len(column_map))
    for cut in cuts:
        coefs = {i: -float(cut.coefs[col]) for i, col in enumerate(column_map) if cut.coefs[col] != 0}
        if cut.kind is CutKind.OPTIMALITY:
            ineq.add({0: -1.0}, -cut.constant, coefs, kind="optimality")
        else:
            ineq.add({}, -cut.constant, coefs, kind="feasibility")
    A, b0, B, eq_kinds = eq.build()
    C, d0, D, ineq_kinds = ineq.build()
    system = MixedConstraintSystem(
        layout=layout,
        c=np.array([1.0]),
        A=A,
        b0=b0,
        B=B,
        C=C,
        d0=d0,
        D=D,
        model=0,
        y_true=-1,
        y_target=-1,
        eq_kinds=eq_kinds,
        ineq_kinds=ineq_kinds,
    )
    return system, column_map


def _repair(beta: np.ndarray, groups: List[np.ndarray], n_beta: int) -> np.ndarray:
    """Closest one-hot-valid beta: keep the first set selector of each group, else its first open one."""
    fixed = np.zeros(n_beta)
    for cols in groups:
        on = cols[beta[cols] > 0.5]
        fixed[on[0] if len(on) else cols[0]] = 1.0
    return fixed


def _theta(cuts: Sequence[BendersCut], beta: np.ndarray, lower_bound: float) -> Tuple[float, bool]:
    theta = lower_bound
    feasible = True
    for cut in cuts:
        value = cut.evaluate(beta)
        if cut.kind is CutKind.OPTIMALITY:
            theta = max(theta, value)
        elif value > FEASIBILITY_CUT_TOL:
            feasible = False
    return theta, feasible


def _master_anneal(
    cuts: Sequence[BendersCut],
    groups: List[np.ndarray],
    n_beta: int,
    lower_bound: float,
    upper_bound: float,
    cfg: AnnealConfig,
    bits: Tuple[int, int],
) -> MasterResult:
    theta_hi = upper_bound if np.isfinite(upper_bound) and upper_bound > lower_bound else lower_bound + 1.0
    system, column_map = master_system(cuts, groups, lower_bound, theta_hi)
    enc = make_encoding(system, *bits)
    instance = assemble(system, enc, choose_rho(system, enc))
    found = solve_sa(instance, cfg)
    best: Optional[MasterResult] = None
    for candidate in found.restart_bits:
        full = np.zeros(n_beta)
        full[column_map] = decode(instance, candidate).beta
        beta = _repair(full, groups, n_beta)
        theta, feasible = _theta(cuts, beta, lower_bound)
        if feasible and (best is None or theta < best.theta):
            best = MasterResult(beta=beta, theta=theta, feasible=True, exact=False)
    if best is None:
        return MasterResult(beta=None, theta=np.inf, feasible=False, exact=False)
    return best


def master(
    cuts: Sequence[BendersCut],
    one_hot_groups: Sequence[np.ndarray],
    fixed_betas: np.ndarray,
    mode: MasterMode = MasterMode.EXHAUSTIVE,
    lower_bound: float = -np.inf,
    upper_bound: float = np.inf,
    anneal_cfg: Optional[AnnealConfig] = None,
    bits: Tuple[int, int] = (6, 4),
) -> MasterResult:
    """Minimizes theta over one-hot beta. Without optimality cuts theta is `lower_bound`.

    Exhaustive mode breaks ties on the lexicographically smallest tuple of segment indices.
    """
    fixed_betas = np.asarray(fixed_betas, dtype=bool)
    groups = _open_groups(one_hot_groups, fixed_betas)
    n_beta = len(fixed_betas)
    if mode is MasterMode.ANNEAL:
        if not np.isfinite(lower_bound):
            raise SolverError("anneal-mode master needs a finite lower bound on theta")
        return _master_anneal(cuts, groups, n_beta, lower_bound, upper_bound, anneal_cfg or AnnealConfig(), bits)
    return _master_exhaustive(cuts, groups, n_beta, lower_bound)


def run(
    system: MixedConstraintSystem,
    tol: float = 1e-6,
    max_iter: int = 500,
    mode: MasterMode = MasterMode.EXHAUSTIVE,
    anneal_cfg: Optional[AnnealConfig] = None,
    deadline: Optional[float] = None,
) -> BendersResult:
    """Alternates master and subproblem until the bound gap is within `tol`.

    The returned `lower_bound` is always a certified bound: in anneal mode it only moves when the master is
    re-solved exhaustively, which happens whenever annealing proposes an already visited beta or claims
    convergence.
    """
    if tol <= 0:
        raise SolverError(f"tol must be > 0, got {tol}")
    state = BendersState(lower_bound=box_lower_bound(system))
    groups, fixed = system.one_hot_groups, system.fixed_beta
    open_size = system.beta_space_size()
    visited = set()
    status = "incomplete"

    while state.iterations < max_iter:
        if deadline is not None and time.monotonic() > deadline:
            break
        state.iterations += 1
        result = master(
            state.cuts, groups, fixed, mode, state.lower_bound, state.upper_bound, anneal_cfg
        )
        key = None if result.beta is None else tuple(np.flatnonzero(result.beta))
        needs_exact = mode is MasterMode.ANNEAL and (
            result.beta is None or key in visited or state.upper_bound - result.theta <= tol
        )
        if needs_exact:
            if open_size > MASTER_CAP:
                logger.warning("anneal master stalled and the selector space is too large to re-solve exactly")
                break
            result = master(state.cuts, groups, fixed, MasterMode.EXHAUSTIVE, state.lower_bound)
            key = None if result.beta is None else tuple(np.flatnonzero(result.beta))
        if result.exact:
            if not result.feasible:
                if np.isfinite(state.upper_bound):
                    raise InvariantViolation("the master cut off the incumbent selector assignment")
                status = "infeasible"
                break
            state.raise_lower(min(result.theta, state.upper_bound))
        if state.gap <= tol:
            status = "optimal"
            break

        visited.add(key)
        sp = subproblem(system, result.beta)
        state.cuts.append(sp.cut)
        if sp.lp.optimal:
            state.offer(sp.value, result.beta, sp.lp.y)
        state.trail.append(
            {
                "iteration": state.iterations,
                "beta": list(key),
                "cut": sp.cut.kind.value,
                "sp_value": sp.value if sp.lp.optimal else None,
                "lower_bound": state.lower_bound,
                "upper_bound": state.upper_bound,
            }
        )
        logger.debug(
            f"benders it={state.iterations} lb={state.lower_bound:.6g} ub={state.upper_bound:.6g} "
            f"cut={sp.cut.kind.value}"
        )
        if state.gap <= tol:
            status = "optimal"
            break

    if status == "infeasible":
        logger.error("every selector assignment was cut off, the encoded system is infeasible")
    optimum = state.upper_bound if status == "optimal" else np.inf
    return BendersResult(
        status=status,
        optimum=optimum,
        lower_bound=state.lower_bound if status != "infeasible" else np.inf,
        upper_bound=state.upper_bound,
        beta=state.incumbent_beta,
        y=state.incumbent_y,
        iterations=state.iterations,
        cuts=state.cuts,
        trail=state.trail,
    )
