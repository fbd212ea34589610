import numpy as np
import pytest

from core.anneal import AnnealConfig
from core.benders import CutKind
from core.benders import MasterMode
from core.benders import master
from core.benders import master_system
from core.benders import run
from core.benders import subproblem
from core.errors import SolverError
from core.exact import solve_enumerate
from core.intervals import propagate
from core.network import ActivationKind
from core.pwl import build_model1
from core.stepbound import build_model2


def test_toy_trace(toy_system):
    system = toy_system()
    result = run(system)
    assert result.status == "optimal"
    assert result.optimum == pytest.approx(1.0)
    assert result.lower_bound == pytest.approx(1.0)
    assert result.iterations == 3
    assert [step["beta"] for step in result.trail] == [[0], [1]]

    first, second = result.cuts
    assert first.kind is CutKind.OPTIMALITY
    assert first.constant == pytest.approx(0.0)
    assert first.coefs.tolist() == pytest.approx([1.0, 0.0])
    assert second.constant == pytest.approx(1.0)
    assert second.coefs.tolist() == pytest.approx([-1.0, 0.0])


def test_feasibility_cut(toy_system):
    # beta_1 = 1 asks for y >= 1 on [0, 0.5]
    system = toy_system(rows=((0.0, [-1.0, 0.0]),), y_hi=0.5)
    sp = subproblem(system, np.array([1.0, 0.0]))
    assert sp.cut.kind is CutKind.FEASIBILITY
    assert sp.value == np.inf
    assert sp.cut.evaluate(np.array([1.0, 0.0])) > 0
    assert sp.cut.evaluate(np.array([0.0, 1.0])) <= 1e-9

    result = run(system)
    assert result.status == "optimal"
    assert result.optimum == pytest.approx(0.0)
    assert [cut.kind for cut in result.cuts] == [CutKind.FEASIBILITY, CutKind.OPTIMALITY]
    assert result.beta.tolist() == [0.0, 1.0]


def test_infeasible_system(toy_system):
    system = toy_system(rows=((-1.0, [0.0, 0.0]),), y_hi=0.5)
    result = run(system)
    assert result.status == "infeasible"
    assert result.lower_bound == np.inf
    assert all(cut.kind is CutKind.FEASIBILITY for cut in result.cuts)


def test_master_without_cuts_breaks_ties_lexicographically():
    groups = [np.array([0, 1]), np.array([2, 3, 4])]
    fixed = np.array([False, False, True, False, False])
    found = master([], groups, fixed, lower_bound=-3.0)
    assert np.flatnonzero(found.beta).tolist() == [0, 3]
    assert found.theta == -3.0
    assert found.exact


def test_master_system_shape(toy_system):
    system = toy_system()
    cuts = [subproblem(system, np.array([1.0, 0.0])).cut, subproblem(system, np.array([0.0, 1.0])).cut]
    msys, column_map = master_system(cuts, system.one_hot_groups, 0.0, 2.0)
    assert column_map.tolist() == [0, 1]
    assert msys.n_y == 1
    assert msys.count("optimality") == 2
    assert msys.count("one-hot") == 1


def test_anneal_master_needs_a_finite_lower_bound():
    with pytest.raises(SolverError):
        master([], [np.array([0, 1])], np.zeros(2, dtype=bool), MasterMode.ANNEAL)


def test_run_rejects_bad_tolerance(toy_system):
    with pytest.raises(SolverError):
        run(toy_system(), tol=0.0)


def test_iteration_cap_leaves_a_sound_bound(make_net):
    net = make_net([2, 4, 2], seed=9)
    bounds = propagate(net, np.zeros(2), 0.5)
    system = build_model1(net, np.zeros(2), 0.5, None, bounds, 0, 1)
    exact = solve_enumerate(system)
    result = run(system, max_iter=1)
    assert result.status == "incomplete"
    assert result.lower_bound <= exact.optimum + 1e-7
    assert result.upper_bound >= exact.optimum - 1e-7


@pytest.mark.parametrize("seed", range(8))
def test_benders_matches_enumeration_on_model1(make_net, seed):
    activation = ActivationKind.RELU if seed % 2 == 0 else ActivationKind.HARDTANH
    net = make_net([2, 3, 2], activation, seed=seed)
    x0 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=2)
    bounds = propagate(net, x0, 0.3)
    system = build_model1(net, x0, 0.3, None, bounds, 0, 1)

    exact = solve_enumerate(system)
    result = run(system, tol=1e-7)

    assert result.status == "optimal"
    assert result.optimum == pytest.approx(exact.optimum, abs=1e-6)
    assert result.lower_bound <= exact.optimum + 1e-6


def test_benders_matches_enumeration_on_model2(make_net):
    net = make_net([2, 2, 2], ActivationKind.SIGMOID, seed=1)
    bounds = propagate(net, np.zeros(2), 0.5)
    system = build_model2(net, None, None, None, bounds, 0, 1, n_segments=2, one_sided=True)
    exact = solve_enumerate(system)
    result = run(system, tol=1e-7)
    assert result.optimum == pytest.approx(exact.optimum, abs=1e-6)


def test_anneal_master_reaches_the_same_optimum(relu_121):
    bounds = propagate(relu_121, np.zeros(1), 1.0)
    system = build_model1(relu_121, np.zeros(1), 1.0, None, bounds, 0, None)
    exact = solve_enumerate(system)
    cfg = AnnealConfig(sweeps=200, restarts=4, seed=1)
    result = run(system, tol=1e-7, mode=MasterMode.ANNEAL, anneal_cfg=cfg)
    assert result.status == "optimal"
    assert result.optimum == pytest.approx(exact.optimum, abs=1e-6)
    assert result.lower_bound <= exact.optimum + 1e-6
