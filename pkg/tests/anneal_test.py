import itertools

import numpy as np
import pytest

from core.anneal import AnnealConfig
from core.anneal import energy
from core.anneal import flip_delta
from core.anneal import solve_exhaustive
from core.anneal import solve_sa
from core.errors import SolverError
from core.qubo import QuboInstance


def _random_qubo(n, seed):
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((n, n))
    return QuboInstance(Q=0.5 * (Q + Q.T), q=rng.standard_normal(n), const=float(rng.standard_normal()), rho=1.0)


def _brute_force(q):
    best = min(itertools.product([0, 1], repeat=q.dimension), key=lambda bits: q.energy(np.array(bits)))
    return q.energy(np.array(best))


def test_flip_delta_matches_energy_difference():
    q = _random_qubo(10, 0)
    bits = np.random.default_rng(1).integers(0, 2, size=10)
    for i in range(10):
        flipped = bits.copy()
        flipped[i] ^= 1
        assert flip_delta(q, bits, i) == pytest.approx(energy(q, flipped) - energy(q, bits))


@pytest.mark.parametrize("n", [1, 5, 9])
def test_exhaustive_matches_brute_force(n):
    q = _random_qubo(n, n)
    found = solve_exhaustive(q)
    assert found.energy == pytest.approx(_brute_force(q))
    assert q.energy(found.bits) == pytest.approx(found.energy)


def test_exhaustive_crosses_the_chunk_boundary():
    q = _random_qubo(18, 4)
    found = solve_exhaustive(q)
    bits = found.bits.copy()
    # no single flip improves a ground state
    for i in range(18):
        assert flip_delta(q, bits, i) >= -1e-9


def test_exhaustive_cap():
    q = QuboInstance(Q=np.zeros((27, 27)), q=np.zeros(27), const=0.0, rho=1.0)
    with pytest.raises(SolverError):
        solve_exhaustive(q)


def test_exhaustive_empty():
    q = QuboInstance(Q=np.zeros((0, 0)), q=np.zeros(0), const=2.5, rho=1.0)
    assert solve_exhaustive(q).energy == 2.5


@pytest.mark.slow
def test_sa_agrees_with_exhaustive():
    cfg = AnnealConfig(sweeps=400, restarts=8, seed=0)
    hits = 0
    for seed in range(100):
        q = _random_qubo(6 + seed % 13, seed)
        if solve_sa(q, cfg).energy == pytest.approx(solve_exhaustive(q).energy, abs=1e-9):
            hits += 1
    assert hits >= 95


def test_sa_is_deterministic():
    q = _random_qubo(12, 3)
    cfg = AnnealConfig(sweeps=50, restarts=3, seed=42)
    a, b = solve_sa(q, cfg), solve_sa(q, cfg)
    assert a.bits.tolist() == b.bits.tolist()
    assert a.history == b.history
    assert len(a.restart_bits) == 3
    assert a.energy == min(a.history)


def test_sa_budget():
    q = _random_qubo(12, 3)
    found = solve_sa(q, AnnealConfig(sweeps=100_000, restarts=50, budget_ms=0.0))
    assert found.budget_exhausted
    assert found.sweeps_done < 100_000
    assert q.energy(found.bits) == pytest.approx(found.energy)


@pytest.mark.parametrize(
    "kwargs",
    [{"sweeps": 0}, {"restarts": 0}, {"t_final_ratio": 1.0}, {"t_final_ratio": 0.0}, {"t_initial": -1.0}],
)
def test_anneal_config_validation(kwargs):
    with pytest.raises(SolverError):
        AnnealConfig(**kwargs)
