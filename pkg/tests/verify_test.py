import numpy as np
import pytest

from core import benders
from core import verify
from core.anneal import AnnealConfig
from core.benders import BendersResult
from core.errors import EncodingError
from core.errors import InvariantViolation
from core.errors import SolverError
from core.errors import UnsupportedActivationError
from core.exact import ExactResult
from core.network import ActivationKind
from core.network import Network
from core.network import Sample
from core.network import batch_margins
from core.network import forward_eval
from core.queries import SolverKind
from core.verify import SampleVerdict
from core.verify import SolveOutcome
from core.verify import Verdict
from core.verify import VerifyOptions
from core.verify import cached_bounds
from core.verify import margin_bounds
from core.verify import verify_sample

EXACT_SOLVERS = [SolverKind.ENUMERATE, SolverKind.BNB, SolverKind.BENDERS]


def _cancel_net(offset):
    """Margin relu(x) - relu(x - 0.1) + offset: interval bounds lose the cancellation."""
    return Network.from_arrays(
        [[[1.0], [1.0]], [[1.0, -1.0], [0.0, 0.0]]], [[0.0, -0.1], [offset, 0.0]], ActivationKind.RELU
    )


def _opts(solver, **kwargs):
    return VerifyOptions(solver=solver, budget_ms=None, ibp_screen=False, spin_budget=None, **kwargs)


def _assert_valid_counterexample(net, sample, eps, verdict):
    x = verdict.counterexample
    assert np.max(np.abs(x - sample.x0)) <= eps + 1e-9
    margin = batch_margins(forward_eval(net, x[None, :]), sample.label)[0]
    assert margin <= 0
    assert verdict.replayed_margin == pytest.approx(margin)


def test_misclassified_sample_is_nonrobust():
    net = _cancel_net(0.05)
    sample = Sample(x0=np.zeros(1), label=1)
    res = verify_sample(net, sample, 0.5)
    assert res.verdict is Verdict.NONROBUST
    assert res.solver == "nominal"
    assert res.counterexample.tolist() == [0.0]


def test_interval_screen_certifies_a_small_ball():
    net = _cancel_net(0.05)
    res = verify_sample(net, Sample(x0=np.array([-0.5]), label=0), 0.1)
    assert res.verdict is Verdict.ROBUST
    assert res.solver == "ibp"
    assert res.lower_bound > 0


@pytest.mark.parametrize("solver", EXACT_SOLVERS)
def test_exact_solvers_certify_what_intervals_cannot(solver):
    net = _cancel_net(0.05)
    sample = Sample(x0=np.zeros(1), label=0)
    res = verify_sample(net, sample, 1.0, _opts(solver))
    assert res.verdict is Verdict.ROBUST
    assert res.lower_bound == pytest.approx(0.05, abs=1e-6)
    assert res.spins > 0
    assert res.targets[0]["target"] == 1


@pytest.mark.parametrize("solver", EXACT_SOLVERS)
def test_exact_solvers_find_a_counterexample(solver):
    net = _cancel_net(-0.05)
    sample = Sample(x0=np.array([0.5]), label=0)
    res = verify_sample(net, sample, 1.0, _opts(solver))
    assert res.verdict is Verdict.NONROBUST
    _assert_valid_counterexample(net, sample, 1.0, res)
    assert res.upper_bound == res.replayed_margin


def test_qubo_solver_never_certifies():
    net = _cancel_net(0.05)
    sample = Sample(x0=np.zeros(1), label=0)
    opts = _opts(SolverKind.QUBO_SA, anneal=AnnealConfig(sweeps=100, restarts=3))
    res = verify_sample(net, sample, 1.0, opts)
    assert res.verdict is Verdict.UNKNOWN
    assert np.isfinite(res.lower_bound)
    assert res.lower_bound < 0


def test_qubo_counterexamples_are_replayed():
    net = _cancel_net(-0.05)
    sample = Sample(x0=np.array([0.5]), label=0)
    opts = _opts(SolverKind.QUBO_SA, anneal=AnnealConfig(sweeps=200, restarts=5))
    res = verify_sample(net, sample, 1.0, opts)
    assert res.verdict is not Verdict.ROBUST
    if res.verdict is Verdict.NONROBUST:
        _assert_valid_counterexample(net, sample, 1.0, res)


@pytest.mark.parametrize("seed", range(6))
def test_solvers_agree_on_random_nets(make_net, seed):
    net = make_net([2, 4, 3], seed=seed)
    x0 = np.random.default_rng(seed).uniform(-1.0, 1.0, size=2)
    sample = Sample(x0=x0, label=int(np.argmax(forward_eval(net, x0))))
    eps = 0.15
    verdicts = [verify_sample(net, sample, eps, _opts(solver)) for solver in EXACT_SOLVERS]
    assert len({v.verdict for v in verdicts}) == 1
    xs = x0 + np.random.default_rng(0).uniform(-eps, eps, size=(3000, 2))
    margins = batch_margins(forward_eval(net, xs), sample.label)
    for v in verdicts:
        assert v.verdict is not Verdict.UNKNOWN
        assert np.all(margins >= v.lower_bound - 1e-9)
        if v.verdict is Verdict.NONROBUST:
            _assert_valid_counterexample(net, sample, eps, v)


def test_model2_is_sound(make_net):
    net = make_net([2, 3, 2], ActivationKind.SIGMOID, seed=4)
    x0 = np.array([0.1, 0.2])
    sample = Sample(x0=x0, label=int(np.argmax(forward_eval(net, x0))))
    eps = 0.3
    res = verify_sample(net, sample, eps, _opts(SolverKind.BNB, model=2, segments=4))
    xs = x0 + np.random.default_rng(2).uniform(-eps, eps, size=(3000, 2))
    margins = batch_margins(forward_eval(net, xs), sample.label)
    assert np.all(margins >= res.lower_bound - 1e-9)
    if res.verdict is Verdict.NONROBUST:
        _assert_valid_counterexample(net, sample, eps, res)


def test_model1_rejects_smooth_activations(make_net):
    net = make_net([2, 3, 2], ActivationKind.TANH, seed=0)
    with pytest.raises(UnsupportedActivationError):
        verify_sample(net, Sample(x0=np.zeros(2), label=0), 0.1, _opts(SolverKind.BNB))


def test_partitioned_verification_never_claims_nonrobust(make_net):
    net = make_net([2, 4, 4, 2], seed=7)
    x0 = np.array([0.3, -0.6])
    sample = Sample(x0=x0, label=int(np.argmax(forward_eval(net, x0))))
    for eps in (1e-4, 0.3):
        res = verify_sample(net, sample, eps, _opts(SolverKind.ENUMERATE, partition_at=1))
        assert res.cut == 1
        assert res.verdict in (Verdict.ROBUST, Verdict.UNKNOWN)
        assert res.counterexample is None


def test_budget_leaves_the_sample_unknown():
    net = _cancel_net(0.05)
    opts = VerifyOptions(solver=SolverKind.BENDERS, budget_ms=1e-6, ibp_screen=False, spin_budget=None)
    res = verify_sample(net, Sample(x0=np.zeros(1), label=0), 1.0, opts)
    assert res.verdict is Verdict.UNKNOWN
    assert res.budget_exhausted


def test_bad_requests():
    net = _cancel_net(0.05)
    with pytest.raises(EncodingError):
        verify_sample(net, Sample(x0=np.zeros(1), label=0), -0.1)
    with pytest.raises(EncodingError):
        VerifyOptions(model=3)
    with pytest.raises(SolverError):
        VerifyOptions(budget_ms=0)


def test_sample_verdict_to_dict_drops_infinities():
    record = SampleVerdict(
        index=0, label=0, eps=0.1, verdict=Verdict.UNKNOWN, lower_bound=-np.inf, upper_bound=0.5, solver="x", model=1
    )
    doc = record.to_dict()
    assert doc["lower_bound"] is None
    assert doc["upper_bound"] == 0.5
    assert doc["verdict"] == "unknown"


def test_margin_bounds_bracket_the_margin():
    net = _cancel_net(-0.05)
    sample = Sample(x0=np.array([0.5]), label=0)
    lower, upper = margin_bounds(_opts(SolverKind.ENUMERATE))(net, sample, 1.0)
    assert lower == pytest.approx(-0.05, abs=1e-6)
    assert upper <= 0


def test_bounds_are_cached():
    net = _cancel_net(0.05)
    assert cached_bounds(net, np.zeros(1), 0.3) is cached_bounds(net, np.zeros(1), 0.3)


def _infeasible_exact(*args, **kwargs):
    return ExactResult(status="infeasible", optimum=np.inf, lower_bound=np.inf)


def _infeasible_benders(*args, **kwargs):
    return BendersResult(
        status="infeasible",
        optimum=np.inf,
        lower_bound=np.inf,
        upper_bound=np.inf,
        beta=None,
        y=None,
        iterations=1,
        cuts=[],
        trail=[],
    )


@pytest.mark.parametrize(
    "solver, module, name, fake",
    [
        (SolverKind.ENUMERATE, verify, "solve_enumerate", _infeasible_exact),
        (SolverKind.BNB, verify, "solve_branch_and_bound", _infeasible_exact),
        (SolverKind.BENDERS, benders, "run", _infeasible_benders),
    ],
)
def test_infeasible_query_system_is_an_invariant_violation(monkeypatch, solver, module, name, fake):
    monkeypatch.setattr(module, name, fake)
    net = _cancel_net(0.05)
    with pytest.raises(InvariantViolation):
        verify_sample(net, Sample(x0=np.zeros(1), label=0), 1.0, _opts(solver))


def test_unfinished_search_without_incumbent_stays_unknown(monkeypatch):
    def _stopped(*args, **kwargs):
        return ExactResult(status="infeasible", optimum=np.inf, lower_bound=-0.2, complete=False)

    monkeypatch.setattr(verify, "solve_branch_and_bound", _stopped)
    res = verify_sample(_cancel_net(0.05), Sample(x0=np.zeros(1), label=0), 1.0, _opts(SolverKind.BNB))
    assert res.verdict is Verdict.UNKNOWN
    assert res.budget_exhausted


def test_lower_bound_above_the_replayed_margin_is_rejected(monkeypatch):
    def _too_high(*args, **kwargs):
        return ExactResult(status="optimal", optimum=5.0, lower_bound=5.0)

    monkeypatch.setattr(verify, "solve_enumerate", _too_high)
    # nominal margin is 0.05
    with pytest.raises(InvariantViolation):
        verify_sample(_cancel_net(0.05), Sample(x0=np.zeros(1), label=0), 1.0, _opts(SolverKind.ENUMERATE))


def test_bounds_from_non_certifying_solvers_are_ignored(monkeypatch):
    def _claims_a_bound(*args, **kwargs):
        return SolveOutcome(lower_bound=10.0, complete=True)

    monkeypatch.setattr(verify, "_run_solver", _claims_a_bound)
    net = _cancel_net(0.05)
    sample = Sample(x0=np.zeros(1), label=0)
    res = verify_sample(net, sample, 1.0, _opts(SolverKind.QUBO_SA))
    assert res.verdict is Verdict.UNKNOWN
    assert res.lower_bound < 0
    partitioned = verify_sample(net, sample, 1.0, _opts(SolverKind.QUBO_EXACT, partition_at=1))
    assert partitioned.verdict is Verdict.UNKNOWN


def test_model2_defaults_to_two_sided(make_net):
    net = make_net([2, 3, 2], ActivationKind.SIGMOID, seed=4)
    assert VerifyOptions().one_sided is False
    x0 = np.array([0.1, 0.2])
    sample = Sample(x0=x0, label=int(np.argmax(forward_eval(net, x0))))
    two = verify_sample(net, sample, 0.3, _opts(SolverKind.BNB, model=2))
    one = verify_sample(net, sample, 0.3, _opts(SolverKind.BNB, model=2, one_sided=True))
    assert two.spins > one.spins
    assert two.lower_bound == pytest.approx(one.lower_bound, abs=1e-6)
