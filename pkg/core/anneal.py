"""QUBO solvers: exhaustive enumeration for tiny instances and single-flip simulated annealing."""
import logging
import time
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional

import numpy as np

from core.errors import SolverError
from core.qubo import QuboInstance

logger = logging.getLogger(__name__)

EXHAUSTIVE_CAP = 26
_CHUNK_BITS = 16


@dataclass(frozen=True)
class AnnealConfig:
    sweeps: int = 2000
    restarts: int = 20
    t_initial: Optional[float] = None
    t_final_ratio: float = 1e-3
    seed: int = 0
    budget_ms: Optional[float] = None

    def __post_init__(self) -> None:
        if self.sweeps < 1 or self.restarts < 1:
            raise SolverError(f"sweeps and restarts must be >= 1, got {self.sweeps}, {self.restarts}")
        if not 0 < self.t_final_ratio < 1:
            raise SolverError(f"t_final_ratio must be in (0, 1), got {self.t_final_ratio}")
        if self.t_initial is not None and self.t_initial <= 0:
            raise SolverError(f"t_initial must be > 0, got {self.t_initial}")


@dataclass
class AnnealResult:
    bits: np.ndarray
    energy: float
    history: List[float] = field(default_factory=list)
    restart_bits: List[np.ndarray] = field(default_factory=list)
    sweeps_done: int = 0
    budget_exhausted: bool = False
    wall_ms: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "bits": self.bits.astype(int).tolist(),
            "energy": self.energy,
            "history": self.history,
            "sweeps_done": self.sweeps_done,
            "budget_exhausted": self.budget_exhausted,
            "wall_ms": self.wall_ms,
        }


def energy(q: QuboInstance, bits: np.ndarray) -> float:
    return q.energy(bits)


def flip_delta(q: QuboInstance, bits: np.ndarray, i: int) -> float:
    """E(x with bit i flipped) - E(x), from one row of Q."""
    x = np.asarray(bits, dtype=float)
    d = 1.0 - 2.0 * x[i]
    return float(d * (2.0 * (q.Q[i] @ x) + q.q[i]) + q.Q[i, i])


def solve_exhaustive(q: QuboInstance) -> AnnealResult:
    n = q.dimension
    if n > EXHAUSTIVE_CAP:
        raise SolverError(f"exhaustive search is capped at {EXHAUSTIVE_CAP} bits, instance has {n}")
    start = time.monotonic()
    if n == 0:
        return AnnealResult(bits=np.zeros(0), energy=q.const)
    low = min(n, _CHUNK_BITS)
    low_idx = np.arange(1 << low)
    low_bits = ((low_idx[:, None] >> np.arange(low)) & 1).astype(float)
    best_energy = np.inf
    best_index = 0
    for high in range(1 << (n - low)):
        high_bits = ((high >> np.arange(n - low)) & 1).astype(float)
        X = np.hstack([low_bits, np.broadcast_to(high_bits, (len(low_bits), n - low))])
        energies = np.einsum("ij,ij->i", X @ q.Q, X) + X @ q.q + q.const
        k = int(np.argmin(energies))
        # first minimum in enumeration order wins ties
        if energies[k] < best_energy:
            best_energy = float(energies[k])
            best_index = (high << low) | k
    bits = ((best_index >> np.arange(n)) & 1).astype(np.int8)
    return AnnealResult(
        bits=bits, energy=best_energy, restart_bits=[bits], wall_ms=1000 * (time.monotonic() - start)
    )


def _initial_temperature(q: QuboInstance) -> float:
    """Largest single-flip |dE| any state can see."""
    bound = np.abs(q.q) + np.abs(np.diag(q.Q)) + 2.0 * (np.sum(np.abs(q.Q), axis=1) - np.abs(np.diag(q.Q)))
    t = float(np.max(bound, initial=0.0))
    return t if t > 0 else 1.0


def solve_sa(q: QuboInstance, cfg: AnnealConfig) -> AnnealResult:
    """Metropolis single-bit flips with geometric cooling, reheated at every restart.

    Restart k draws from `default_rng([seed, k])`, so results depend on the seed only. The best state over all
    restarts is returned, ties going to the lower restart index.
    """
    n = q.dimension
    start = time.monotonic()
    deadline = None if cfg.budget_ms is None else start + cfg.budget_ms / 1000.0
    if n == 0:
        return AnnealResult(bits=np.zeros(0, dtype=np.int8), energy=q.const)

    t0 = cfg.t_initial or _initial_temperature(q)
    temps = t0 * cfg.t_final_ratio ** (np.arange(cfg.sweeps) / max(cfg.sweeps - 1, 1))
    Q, lin, diag = q.Q, q.q, np.diag(q.Q)

    best_bits: Optional[np.ndarray] = None
    best_energy = np.inf
    history: List[float] = []
    restart_bits: List[np.ndarray] = []
    sweeps_done = 0
    exhausted = False

    for restart in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, restart])
        x = rng.integers(0, 2, size=n).astype(float)
        g = Q @ x
        e = float(x @ g + lin @ x + q.const)
        run_best, run_bits = e, x.copy()
        for t in temps:
            order = rng.permutation(n)
            accept = rng.random(n)
            for pos, i in enumerate(order):
                d = 1.0 - 2.0 * x[i]
                delta = d * (2.0 * g[i] + lin[i]) + diag[i]
                if delta <= 0 or accept[pos] < np.exp(-delta / t):
                    x[i] += d
                    g += d * Q[:, i]
                    e += delta
                    if e < run_best:
                        run_best, run_bits = e, x.copy()
            sweeps_done += 1
            if deadline is not None and time.monotonic() > deadline:
                exhausted = True
                break
        # re-evaluate to shed accumulated rounding from the incremental updates
        run_best = q.energy(run_bits)
        history.append(run_best)
        restart_bits.append(run_bits.astype(np.int8))
        if run_best < best_energy:
            best_energy, best_bits = run_best, run_bits
        if exhausted:
            logger.info(f"annealing budget of {cfg.budget_ms} ms exhausted after {restart + 1} restarts")
            break

    wall_ms = 1000 * (time.monotonic() - start)
    logger.debug(f"annealing: n={n} best={best_energy:.6g} sweeps={sweeps_done} wall={wall_ms:.0f}ms")
    return AnnealResult(
        bits=best_bits.astype(np.int8),
        energy=float(best_energy),
        history=history,
        restart_bits=restart_bits,
        sweeps_done=sweeps_done,
        budget_exhausted=exhausted,
        wall_ms=wall_ms,
    )
