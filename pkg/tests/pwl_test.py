import numpy as np
import pytest

from core.errors import DegenerateSegmentError
from core.errors import EncodingError
from core.errors import UnsupportedActivationError
from core.exact import solve_enumerate
from core.intervals import propagate
from core.network import ActivationKind
from core.network import Network
from core.network import forward_eval
from core.network import op_norm_inf
from core.pwl import build_model1
from core.pwl import build_segment_table_pwl
from core.pwl import default_tables
from core.stepbound import pair_objective
from core.system import eval_feasible


def test_relu_table():
    table = build_segment_table_pwl(ActivationKind.RELU, -1.0, 2.0)
    assert table.breakpoints.tolist() == [-1.0, 0.0, 2.0]
    assert table.slopes.tolist() == [0.0, 1.0]
    assert table.intercepts.tolist() == [0.0, 0.0]
    assert table.value(1.5) == 1.5
    assert table.value(-0.5) == 0.0


def test_relu_table_without_kink():
    table = build_segment_table_pwl(ActivationKind.RELU, 0.5, 2.0)
    assert table.n_segments == 1
    assert table.slopes.tolist() == [1.0]


def test_hardtanh_table():
    table = build_segment_table_pwl(ActivationKind.HARDTANH, -2.0, 2.0)
    assert table.breakpoints.tolist() == [-2.0, -1.0, 1.0, 2.0]
    assert table.slopes.tolist() == [0.0, 1.0, 0.0]
    assert table.intercepts.tolist() == [-1.0, 0.0, 1.0]


def test_min_segments_splits_and_stays_exact():
    table = build_segment_table_pwl(ActivationKind.RELU, -1.0, 3.0, min_segments=4)
    assert table.n_segments == 4
    for z in np.linspace(-1.0, 3.0, 41):
        assert table.value(z) == pytest.approx(max(z, 0.0))


def test_table_errors():
    with pytest.raises(DegenerateSegmentError):
        build_segment_table_pwl(ActivationKind.RELU, 1.0, 1.0)
    with pytest.raises(UnsupportedActivationError):
        build_segment_table_pwl(ActivationKind.SIGMOID, -1.0, 1.0)


def test_model1_layout_counts(relu_121):
    x0, eps = np.zeros(1), 1.0
    bounds = propagate(relu_121, x0, eps)
    tables = default_tables(relu_121, bounds, min_segments=2)
    system = build_model1(relu_121, x0, eps, tables, bounds, 0, None)
    assert system.n_y == 13
    assert system.n_beta == 6
    assert system.A.shape[0] == 9
    assert system.C.shape[0] == 32
    assert system.count("big-m") == 24
    assert system.count("one-hot") == 3
    assert len(system.one_hot_groups) == 3


def test_model1_degenerate_neuron_is_a_constant():
    # second hidden neuron has a zero row: it never moves
    net = Network.from_arrays(
        [[[1.0], [0.0]], [[1.0, 1.0], [0.0, 1.0]]], [[0.0, 0.3], [0.0, 0.0]], ActivationKind.RELU
    )
    bounds = propagate(net, np.zeros(1), 1.0)
    system = build_model1(net, np.zeros(1), 1.0, None, bounds, 0, 1)
    assert system.layout.block("u", 1).size == 2
    res = solve_enumerate(system)
    # logit0 - logit1 = relu(x) + 0.3 - 0.3
    assert res.optimum == pytest.approx(0.0, abs=1e-7)


def test_model1_rejects_bad_requests(relu_121, sigmoid_121, make_net):
    bounds = propagate(relu_121, np.zeros(1), 1.0)
    with pytest.raises(EncodingError):
        build_model1(relu_121, np.zeros(1), 1.0, None, None, 0, None)
    with pytest.raises(EncodingError):
        build_model1(relu_121, np.ones(1), 1.0, None, bounds, 0, None)
    with pytest.raises(UnsupportedActivationError):
        build_model1(sigmoid_121, None, None, None, propagate(sigmoid_121, np.zeros(1), 1.0), 0, None)
    net = make_net([2, 3, 2], seed=0)
    two = propagate(net, np.zeros(2), 0.1)
    with pytest.raises(EncodingError):
        build_model1(net, None, None, None, two, 0, None)
    with pytest.raises(EncodingError):
        build_model1(net, None, None, None, two, 1, 1)
    with pytest.raises(EncodingError):
        build_model1(net, None, None, None, two, 0, 2)


def _margin_lipschitz(net, y_true, y_target):
    """Lipschitz constant of logit[y_true] - logit[y_target] w.r.t. the inf-norm, for 1-Lipschitz activations."""
    last = net.layers[-1].weights
    bound = float(np.sum(np.abs(last[y_true] - last[y_target])))
    for layer in net.layers[:-1]:
        bound *= op_norm_inf(layer.weights)
    return bound


def _grid_min(net, x0, eps, step=1e-3):
    axis = np.linspace(-eps, eps, int(np.ceil(2 * eps / step)) + 1)
    g1, g2 = np.meshgrid(x0[0] + axis, x0[1] + axis)
    xs = np.stack([g1.ravel(), g2.ravel()], axis=1)
    out = forward_eval(net, xs)
    return float(np.min(out[:, 0] - out[:, 1]))


@pytest.mark.parametrize("seed", range(20))
def test_model1_optimum_matches_grid_search(make_net, seed):
    activation = ActivationKind.RELU if seed % 2 == 0 else ActivationKind.HARDTANH
    widths = [2, 3, 2] if seed % 3 else [2, 2, 2, 2]
    net = make_net(widths, activation, seed=seed, scale=0.5)
    x0 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=2)
    eps = 0.1
    bounds = propagate(net, x0, eps)
    system = build_model1(net, x0, eps, None, bounds, 0, 1)

    res = solve_enumerate(system)
    # a grid point lies within step / 2 of every input, so the grid minimum is off by at most lip * step / 2
    step = min(1e-3, 1e-3 / max(_margin_lipschitz(net, 0, 1), 1e-12))
    grid = _grid_min(net, x0, eps, step)

    assert res.optimum <= grid + 1e-7
    assert res.optimum == pytest.approx(grid, abs=1e-3)
    assert eval_feasible(system, res.y, res.beta).max_violation <= 1e-6
    x = system.decode_input(res.y)
    assert pair_objective(net, x, 0, 1) == pytest.approx(res.optimum, abs=1e-6)


@pytest.mark.parametrize("seed", range(12))
def test_interval_pruning_keeps_the_optimum(make_net, seed):
    activation = ActivationKind.RELU if seed % 3 else ActivationKind.HARDTANH
    widths = [2, 3, 2] if seed % 2 else [2, 2, 2, 2]
    net = make_net(widths, activation, seed=seed)
    x0 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=2)
    eps = 0.25
    bounds = propagate(net, x0, eps)
    pruned = build_model1(net, x0, eps, None, bounds, 0, 1)
    full = build_model1(net, x0, eps, None, bounds, 0, 1, prune=False)
    assert not full.fixed_beta.any()
    assert pruned.beta_space_size() <= full.beta_space_size()
    assert solve_enumerate(pruned).optimum == pytest.approx(solve_enumerate(full).optimum, abs=1e-7)


def test_eval_feasible_reports_violations(toy_system):
    system = toy_system()
    # y >= beta_1 and y >= 1 - beta_1 on [0, 2]
    assert eval_feasible(system, np.array([1.0]), np.array([1.0, 0.0])).max_violation <= 1e-9
    both = eval_feasible(system, np.array([1.0]), np.array([1.0, 1.0]))
    assert both.max_violation >= 1.0
    delta = 0.375
    outside = eval_feasible(system, np.array([2.0 + delta]), np.array([1.0, 0.0]))
    assert outside.max_violation == pytest.approx(delta)
    assert outside.objective == pytest.approx(2.0 + delta)
