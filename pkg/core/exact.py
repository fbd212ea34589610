"""Exact solvers for a `MixedConstraintSystem`: plain enumeration of the selectors, and a best-first
branch and bound over the one-hot groups bounded by the LP relaxation (selectors in [0, 1])."""
import heapq
import itertools
import logging
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from core.errors import SolverError
from core.lp import LpSolution
from core.lp import solve_lp
from core.system import MixedConstraintSystem

logger = logging.getLogger(__name__)

ENUMERATE_CAP = 1 << 16
INTEGRALITY_TOL = 1e-7


@dataclass
class ExactResult:
    status: str
    optimum: float
    lower_bound: float
    beta: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    evaluated: int = 0
    complete: bool = True
    trail: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "status": self.status,
            "optimum": self.optimum,
            "lower_bound": self.lower_bound,
            "beta": None if self.beta is None else self.beta.astype(int).tolist(),
            "evaluated": self.evaluated,
            "complete": self.complete,
        }


def solve_sp(system: MixedConstraintSystem, beta: np.ndarray) -> LpSolution:
    """SP(beta): min c.y s.t. A y = b0 + B beta, C y <= d0 + D beta, lo <= y <= hi."""
    b, d = system.sp_rhs(beta)
    return solve_lp(system.A, b, system.C, d, system.c, system.lo, system.hi)


def free_columns(system: MixedConstraintSystem) -> List[np.ndarray]:
    """Per one-hot group, the selector columns that interval pruning left open."""
    fixed = system.fixed_beta
    return [cols[~fixed[cols]] for cols in system.one_hot_groups]


def iter_betas(system: MixedConstraintSystem):
    """Yields every one-hot-valid beta over the open selectors, in lexicographic order of segment indices."""
    groups = free_columns(system)
    for choice in itertools.product(*groups):
        beta = np.zeros(system.n_beta)
        beta[list(choice)] = 1.0
        yield beta


def box_lower_bound(system: MixedConstraintSystem) -> float:
    """min c.y over the box alone."""
    return float(np.sum(np.minimum(system.c * system.lo, system.c * system.hi)) + system.offset)


def solve_enumerate(system: MixedConstraintSystem, cap: int = ENUMERATE_CAP) -> ExactResult:
    size = system.beta_space_size()
    if size > cap:
        raise SolverError(
            f"{size} selector assignments exceed the enumeration cap of {cap}", payload={"size": size, "cap": cap}
        )
    best = ExactResult(status="infeasible", optimum=float("inf"), lower_bound=float("inf"))
    for beta in iter_betas(system):
        sol = solve_sp(system, beta)
        best.evaluated += 1
        if not sol.optimal:
            continue
        value = sol.objective + system.offset
        if value < best.optimum:
            best.optimum = value
            best.lower_bound = value
            best.beta = beta
            best.y = sol.y
            best.status = "optimal"
    logger.debug(f"enumerated {best.evaluated} assignments, optimum={best.optimum}")
    return best


def _relaxation(
    system: MixedConstraintSystem, beta_lo: np.ndarray, beta_hi: np.ndarray
) -> Tuple[LpSolution, int]:
    """LP over [y, beta] with beta relaxed to [beta_lo, beta_hi]."""
    n_y = system.n_y
    A = np.hstack([system.A, -system.B])
    C = np.hstack([system.C, -system.D])
    c = np.concatenate([system.c, np.zeros(system.n_beta)])
    lo = np.concatenate([system.lo, beta_lo])
    hi = np.concatenate([system.hi, beta_hi])
    return solve_lp(A, system.b0, C, system.d0, c, lo, hi), n_y


def solve_branch_and_bound(
    system: MixedConstraintSystem,
    tol: float = 1e-9,
    max_nodes: int = 100_000,
    deadline: Optional[float] = None,
) -> ExactResult:
    """Best-first branch and bound; branching fixes a whole one-hot group to one segment.

    Stops early when `max_nodes` or the `deadline` (a `time.monotonic()` value) is hit, in which case
    `lower_bound` is the smallest bound of the open nodes and `complete` is False.
    """
    groups = free_columns(system)
    base_hi = np.where(system.fixed_beta, 0.0, 1.0)
    counter = itertools.count()
    result = ExactResult(status="infeasible", optimum=float("inf"), lower_bound=float("inf"))

    def _bound(beta_lo: np.ndarray, beta_hi: np.ndarray) -> Optional[Tuple[float, np.ndarray, np.ndarray]]:
        sol, n_y = _relaxation(system, beta_lo, beta_hi)
        result.evaluated += 1
        if not sol.optimal:
            return None
        return sol.objective + system.offset, sol.y[:n_y], sol.y[n_y:]

    root = _bound(np.zeros(system.n_beta), base_hi)
    heap: List[Tuple[float, int, np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = []
    if root is not None:
        heapq.heappush(heap, (root[0], next(counter), np.zeros(system.n_beta), base_hi, root[1], root[2]))

    while heap:
        bound, _, beta_lo, beta_hi, y, beta = heapq.heappop(heap)
        if bound >= result.optimum - tol:
            continue
        if result.evaluated >= max_nodes or (deadline is not None and time.monotonic() > deadline):
            heapq.heappush(heap, (bound, next(counter), beta_lo, beta_hi, y, beta))
            result.complete = False
            break

        fractional = [np.max(np.minimum(beta[cols], 1.0 - beta[cols]), initial=0.0) for cols in groups]
        if not groups or max(fractional) <= INTEGRALITY_TOL:
            # the relaxation is integral: it is SP(beta) itself
            result.optimum, result.y, result.beta, result.status = bound, y, np.round(beta), "optimal"
            continue

        branch = int(np.argmax(fractional))
        for col in groups[branch]:
            lo, hi = beta_lo.copy(), beta_hi.copy()
            hi[groups[branch]] = 0.0
            lo[col] = hi[col] = 1.0
            child = _bound(lo, hi)
            if child is not None and child[0] < result.optimum - tol:
                heapq.heappush(heap, (child[0], next(counter), lo, hi, child[1], child[2]))

    open_bound = min((node[0] for node in heap), default=float("inf"))
    result.lower_bound = min(result.optimum, open_bound)
    logger.debug(
        f"branch and bound: {result.evaluated} relaxations, optimum={result.optimum}, "
        f"lower_bound={result.lower_bound}, complete={result.complete}"
    )
    return result
