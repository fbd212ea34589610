"""Dense two-phase primal simplex for the subproblems SP(beta).

Problems read

    min  c.y
    s.t. A y  = b
         C y <= d
         lo <= y <= hi

The box is folded into the inequality block as [C; I; -I] y <= [d; hi; -lo], so `LpSolution.lam` carries one
multiplier per row of that stacked block. Duals follow the convention

    A^T pi - C_full^T lam = c,   lam >= 0,   objective = b.pi - d_full.lam

and an infeasibility certificate (ray_pi, ray_lam) satisfies A^T ray_pi - C_full^T ray_lam = 0, ray_lam >= 0 and
b.ray_pi - d_full.ray_lam > 0.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from enum import unique
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np

from core.errors import LpNumericalError
from core.errors import SolverError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-10
FEASIBILITY_TOL = 1e-7
OPTIMALITY_TOL = 1e-9
KKT_TOL = 1e-7
# Consecutive degenerate pivots tolerated before switching to Bland's rule
DEGENERATE_STREAK = 50


@unique
class LpStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LpProblem:
    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    d: np.ndarray
    c: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n(self) -> int:
        return len(self.c)

    def full_inequalities(self) -> Tuple[np.ndarray, np.ndarray]:
        eye = np.eye(self.n)
        return np.vstack([self.C, eye, -eye]), np.concatenate([self.d, self.hi, -self.lo])


@dataclass
class LpSolution:
    status: LpStatus
    y: Optional[np.ndarray] = None
    pi: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    ray_pi: Optional[np.ndarray] = None
    ray_lam: Optional[np.ndarray] = None
    objective: float = float("nan")
    iterations: int = 0
    bland: bool = False

    @property
    def optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL

    @property
    def infeasible(self) -> bool:
        return self.status is LpStatus.INFEASIBLE

    def to_dict(self) -> Dict[str, Any]:
        def _list(v: Optional[np.ndarray]) -> Optional[List[float]]:
            return None if v is None else v.tolist()

        return {
            "status": self.status.value,
            "objective": self.objective,
            "y": _list(self.y),
            "pi": _list(self.pi),
            "lam": _list(self.lam),
            "ray_pi": _list(self.ray_pi),
            "ray_lam": _list(self.ray_lam),
            "iterations": self.iterations,
        }


class _Tableau:
    """Row-reduced tableau [B^-1 M | B^-1 r] with the reduced costs in the last row."""

    def __init__(self, T: np.ndarray, basis: List[int], bland: bool) -> None:
        self.T = T
        self.basis = basis
        self.bland = bland
        self.iterations = 0

    def pivot(self, row: int, col: int) -> None:
        T = self.T
        T[row] /= T[row, col]
        factors = T[:, col].copy()
        factors[row] = 0.0
        T -= np.outer(factors, T[row])
        self.basis[row] = col

    def _pivot_col(self, allowed: np.ndarray, bland: bool) -> Optional[int]:
        reduced = np.where(allowed, self.T[-1, :-1], np.inf)
        candidates = np.flatnonzero(reduced < -OPTIMALITY_TOL)
        if not len(candidates):
            return None
        if bland:
            return int(candidates[0])
        return int(candidates[np.argmin(reduced[candidates])])

    def _pivot_row(self, col: int, bland: bool) -> Optional[int]:
        column = self.T[:-1, col]
        rows = np.flatnonzero(column > PIVOT_TOL)
        if not len(rows):
            return None
        ratios = self.T[rows, -1] / column[rows]
        best = np.min(ratios)
        ties = rows[ratios <= best + PIVOT_TOL]
        if bland:
            return int(min(ties, key=lambda r: self.basis[r]))
        return int(ties[np.argmax(column[ties])])

    def run(self, allowed: np.ndarray, max_iter: int) -> LpStatus:
        streak = 0
        bland = self.bland
        while True:
            col = self._pivot_col(allowed, bland)
            if col is None:
                return LpStatus.OPTIMAL
            row = self._pivot_row(col, bland)
            if row is None:
                return LpStatus.UNBOUNDED
            if self.T[row, -1] <= PIVOT_TOL:
                streak += 1
                if streak > DEGENERATE_STREAK and not bland:
                    logger.debug("degenerate stall, switching to Bland's rule")
                    bland = True
            else:
                streak = 0
            self.pivot(row, col)
            self.iterations += 1
            if self.iterations > max_iter:
                raise LpNumericalError(
                    f"simplex did not terminate after {max_iter} pivots",
                    payload={"bland": bland, "iterations": self.iterations},
                )


def _standard_form(problem: LpProblem, free: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shifts y = lo + v and returns (M, r, cost) of M x = r, x = [v, slacks, box slacks] >= 0.

    Only the `free` columns (lo < hi) keep a variable; pinned columns are folded into the right-hand side.
    """
    A, C = problem.A, problem.C
    nf = int(np.sum(free))
    m_a, m_c = A.shape[0], C.shape[0]
    lo, hi = problem.lo, problem.hi
    m = m_a + m_c + nf
    M = np.zeros((m, nf + m_c + nf))
    M[:m_a, :nf] = A[:, free]
    M[m_a:m_a + m_c, :nf] = C[:, free]
    M[m_a:m_a + m_c, nf:nf + m_c] = np.eye(m_c)
    M[m_a + m_c:, :nf] = np.eye(nf)
    M[m_a + m_c:, nf + m_c:] = np.eye(nf)
    r = np.concatenate([problem.b - A @ lo, problem.d - C @ lo, (hi - lo)[free]])
    cost = np.concatenate([problem.c[free], np.zeros(m_c + nf)])
    return M, r, cost


def _basis_duals(M: np.ndarray, rows: np.ndarray, basis: List[int], cost: np.ndarray) -> np.ndarray:
    """Solves B^T u = c_B over the kept rows; dropped (redundant) rows get u = 0."""
    u = np.zeros(M.shape[0])
    if len(rows):
        B = M[np.ix_(rows, basis)]
        try:
            u[rows] = np.linalg.solve(B.T, cost[basis])
        except np.linalg.LinAlgError:
            raise LpNumericalError(
                "singular basis while recovering duals", payload={"condition": float(np.linalg.cond(B))}
            )
    return u


def _split_duals(
    problem: LpProblem, free: np.ndarray, u: np.ndarray, column_cost: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Maps standard-form row duals back to (pi, lam) of the original rows and box.

    `column_cost` is c for the optimal duals and 0 for a Farkas ray; whatever the standard form leaves as reduced
    cost on a column becomes the multiplier of that column's lower (positive) or upper (negative) box row.
    """
    n = problem.n
    m_a, m_c = problem.A.shape[0], problem.C.shape[0]
    nf = int(np.sum(free))
    pi = u[:m_a]
    lam_c = -u[m_a:m_a + m_c]
    lam_hi = np.zeros(n)
    lam_lo = np.zeros(n)
    lam_hi[free] = -u[m_a + m_c:m_a + m_c + nf]
    reduced = column_cost - problem.A.T @ pi + problem.C.T @ lam_c + lam_hi
    # free columns: reduced cost is the lower-box multiplier; pinned columns split by sign
    lam_lo[free] = reduced[free]
    pinned = ~free
    lam_lo[pinned] = np.maximum(reduced[pinned], 0.0)
    lam_hi[pinned] = np.maximum(-reduced[pinned], 0.0)
    lam = np.concatenate([lam_c, lam_hi, lam_lo])
    return pi, np.maximum(lam, 0.0)


def _solve(problem: LpProblem, bland: bool) -> LpSolution:
    free = problem.hi - problem.lo > 0.0
    M, r, cost = _standard_form(problem, free)
    m, N = M.shape
    flip = np.where(r < 0, -1.0, 1.0)
    Mf = M * flip[:, None]
    rf = r * flip

    T = np.zeros((m + 1, N + m + 1))
    T[:m, :N] = Mf
    T[:m, N:N + m] = np.eye(m)
    T[:m, -1] = rf
    T[-1, :N] = -np.sum(Mf, axis=0)
    T[-1, -1] = -np.sum(rf)
    tab = _Tableau(T, list(range(N, N + m)), bland)
    max_iter = 50 * (m + N + 1)

    allowed = np.ones(N + m, dtype=bool)
    tab.run(allowed, max_iter)
    infeasibility = -tab.T[-1, -1]

    if infeasibility > FEASIBILITY_TOL:
        phase1_cost = np.concatenate([np.zeros(N), np.ones(m)])
        B = np.hstack([Mf, np.eye(m)])[:, tab.basis]
        try:
            uf = np.linalg.solve(B.T, phase1_cost[tab.basis])
        except np.linalg.LinAlgError:
            raise LpNumericalError("singular phase-1 basis while extracting a Farkas ray")
        u = uf * flip
        ray_pi, ray_lam = _split_duals(problem, free, u, np.zeros(problem.n))
        scale = max(float(np.max(np.abs(ray_pi), initial=0.0)), float(np.max(np.abs(ray_lam), initial=0.0)))
        if scale > 0:
            ray_pi, ray_lam = ray_pi / scale, ray_lam / scale
        return LpSolution(
            status=LpStatus.INFEASIBLE,
            ray_pi=ray_pi,
            ray_lam=ray_lam,
            iterations=tab.iterations,
            bland=bland,
        )

    # drive artificials out of the basis, dropping redundant rows
    keep = np.ones(m, dtype=bool)
    for row in range(m):
        if tab.basis[row] < N:
            continue
        cols = np.flatnonzero(np.abs(tab.T[row, :N]) > PIVOT_TOL)
        if len(cols):
            tab.pivot(row, int(cols[np.argmax(np.abs(tab.T[row, cols]))]))
        else:
            keep[row] = False
    rows = np.flatnonzero(keep)
    basis = [tab.basis[i] for i in rows]
    T2 = np.zeros((len(rows) + 1, N + 1))
    T2[:-1, :N] = tab.T[rows, :N]
    T2[:-1, -1] = tab.T[rows, -1]
    T2[-1, :N] = cost - cost[basis] @ T2[:-1, :N]
    T2[-1, -1] = -cost[basis] @ T2[:-1, -1]
    tab2 = _Tableau(T2, basis, bland)
    tab2.iterations = tab.iterations
    status = tab2.run(np.ones(N, dtype=bool), max_iter)
    if status is LpStatus.UNBOUNDED:
        return LpSolution(status=status, iterations=tab2.iterations, bland=bland)

    x = np.zeros(N)
    x[tab2.basis] = np.maximum(tab2.T[:-1, -1], 0.0)
    y = problem.lo.copy()
    y[free] += x[:int(np.sum(free))]
    y = np.clip(y, problem.lo, problem.hi)
    u = _basis_duals(M, rows, tab2.basis, cost)
    pi, lam = _split_duals(problem, free, u, problem.c)
    return LpSolution(
        status=LpStatus.OPTIMAL,
        y=y,
        pi=pi,
        lam=lam,
        objective=float(problem.c @ y),
        iterations=tab2.iterations,
        bland=bland,
    )


def check_kkt(solution: LpSolution, problem: LpProblem) -> float:
    """Largest KKT residual, recomputed from scratch.

    Optimal solutions: primal feasibility, dual feasibility, complementary slackness and the duality gap.
    Infeasible ones: stationarity and sign of the ray, plus how far its certificate value is from being positive.
    """
    C_full, d_full = problem.full_inequalities()
    if solution.status is LpStatus.INFEASIBLE:
        pi, lam = solution.ray_pi, solution.ray_lam
        stationarity = problem.A.T @ pi - C_full.T @ lam
        value = float(problem.b @ pi - d_full @ lam)
        return max(
            float(np.max(np.abs(stationarity), initial=0.0)),
            float(np.max(-lam, initial=0.0)),
            0.0 if value > 0 else abs(value) + KKT_TOL,
        )
    if solution.status is not LpStatus.OPTIMAL:
        return float("inf")
    y, pi, lam = solution.y, solution.pi, solution.lam
    slack = d_full - C_full @ y
    residuals = [
        float(np.max(np.abs(problem.A @ y - problem.b), initial=0.0)),
        float(np.max(-slack, initial=0.0)),
        float(np.max(np.abs(problem.A.T @ pi - C_full.T @ lam - problem.c), initial=0.0)),
        float(np.max(-lam, initial=0.0)),
        float(np.max(np.abs(lam * slack), initial=0.0)),
        abs(float(problem.c @ y) - float(problem.b @ pi - d_full @ lam)),
    ]
    return max(residuals)


def _scale(problem: LpProblem) -> float:
    data = [problem.b, problem.d, problem.c, problem.lo, problem.hi]
    return 1.0 + max(float(np.max(np.abs(v), initial=0.0)) for v in data)


def solve_lp(
    A: np.ndarray,
    b: np.ndarray,
    C: np.ndarray,
    d: np.ndarray,
    c: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
) -> LpSolution:
    c = np.asarray(c, dtype=float)
    n = len(c)
    problem = LpProblem(
        A=np.asarray(A, dtype=float).reshape(-1, n),
        b=np.asarray(b, dtype=float).reshape(-1),
        C=np.asarray(C, dtype=float).reshape(-1, n),
        d=np.asarray(d, dtype=float).reshape(-1),
        c=c,
        lo=np.asarray(lo, dtype=float),
        hi=np.asarray(hi, dtype=float),
    )
    if not (np.all(np.isfinite(problem.lo)) and np.all(np.isfinite(problem.hi))):
        raise SolverError("every variable needs a finite box")
    if np.any(problem.lo > problem.hi):
        # an empty box is infeasible on its own: lo_k <= y_k <= hi_k
        k = int(np.argmax(problem.lo - problem.hi))
        ray_lam = np.zeros(problem.C.shape[0] + 2 * n)
        ray_lam[problem.C.shape[0] + k] = 1.0
        ray_lam[problem.C.shape[0] + n + k] = 1.0
        return LpSolution(status=LpStatus.INFEASIBLE, ray_pi=np.zeros(problem.A.shape[0]), ray_lam=ray_lam)

    tol = KKT_TOL * _scale(problem)
    solution = _solve(problem, bland=False)
    residual = check_kkt(solution, problem)
    if residual > tol:
        logger.debug(f"KKT residual {residual:.3e} after Dantzig pivoting, retrying with Bland's rule")
        solution = _solve(problem, bland=True)
        residual = check_kkt(solution, problem)
        if residual > tol:
            raise LpNumericalError(
                f"simplex answer fails verification (KKT residual {residual:.3e})",
                payload={"status": solution.status.value, "residual": residual, "n": n},
            )
    return solution
