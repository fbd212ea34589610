"""Per-sample verification: IBP screen, per-target encoding and solve, replay of every candidate input."""
import hashlib
import logging
import threading
import time
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from dataclasses import replace
from enum import Enum
from enum import unique
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Tuple

import numpy as np
from cachetools import LRUCache

import config
from core import benders
from core.anneal import AnnealConfig
from core.anneal import solve_exhaustive
from core.anneal import solve_sa
from core.benders import MasterMode
from core.errors import EncodingError
from core.errors import InvariantViolation
from core.errors import SolverError
from core.exact import ENUMERATE_CAP
from core.exact import solve_branch_and_bound
from core.exact import solve_enumerate
from core.intervals import IntervalBounds
from core.intervals import certify_ibp
from core.intervals import propagate
from core.network import Network
from core.network import Sample
from core.network import forward_eval
from core.network import logit_margin
from core.partition import split_verify
from core.partition import suggest_cut
from core.qubo import assemble
from core.qubo import choose_rho
from core.qubo import decode
from core.qubo import make_encoding
from core.qubo import spin_count
from core.queries import SolverKind
from core.queries import build_query
from core.queries import check_model
from core.queries import target_classes
from core.system import MixedConstraintSystem

logger = logging.getLogger(__name__)

BOUND_TOL = 1e-6


@unique
class Verdict(Enum):
    ROBUST = "robust"
    NONROBUST = "nonrobust"
    UNKNOWN = "unknown"


def default_anneal() -> AnnealConfig:
    return AnnealConfig(
        sweeps=config.ANNEAL_SWEEPS,
        restarts=config.ANNEAL_RESTARTS,
        t_final_ratio=config.ANNEAL_T_FINAL_RATIO,
    )


@dataclass(frozen=True)
class VerifyOptions:
    model: int = 1
    solver: SolverKind = SolverKind.BENDERS
    segments: int = config.SEGMENTS
    one_sided: bool = config.ONE_SIDED
    bits_per_var: int = config.BITS_PER_VAR
    bits_per_slack: int = config.BITS_PER_SLACK
    budget_ms: Optional[float] = config.BUDGET_MS or None
    benders_tol: float = config.BENDERS_TOL
    benders_max_iter: int = config.BENDERS_MAX_ITER
    master_mode: MasterMode = MasterMode.EXHAUSTIVE
    anneal: AnnealConfig = field(default_factory=default_anneal)
    enumerate_cap: int = ENUMERATE_CAP
    partition_at: Optional[int] = None
    spin_budget: Optional[int] = config.SPIN_BUDGET
    ibp_screen: bool = True

    def __post_init__(self) -> None:
        if self.model not in (1, 2):
            raise EncodingError(f"model must be 1 or 2, got {self.model}")
        if self.segments < 1:
            raise EncodingError(f"segments must be >= 1, got {self.segments}")
        if self.budget_ms is not None and self.budget_ms <= 0:
            raise SolverError(f"budget_ms must be > 0, got {self.budget_ms}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["solver"] = self.solver.value
        d["master_mode"] = self.master_mode.value
        return d


@dataclass
class SolveOutcome:
    lower_bound: float
    complete: bool
    candidates: List[np.ndarray] = field(default_factory=list)
    budget_exhausted: bool = False
    detail: Dict[str, Any] = field(default_factory=dict)
    infeasible: bool = False


def _remaining_ms(deadline: Optional[float]) -> Optional[float]:
    if deadline is None:
        return None
    return max(1.0, 1000.0 * (deadline - time.monotonic()))


def solve_system(system: MixedConstraintSystem, opts: VerifyOptions, deadline: Optional[float] = None) -> SolveOutcome:
    """Runs the configured solver; `lower_bound` is -inf for solvers that cannot certify."""
    outcome = _run_solver(system, opts, deadline)
    if outcome.infeasible:
        raise InvariantViolation(
            f"the model {system.model} query system has no feasible selector assignment",
            payload={"solver": opts.solver.value, **outcome.detail},
        )
    return outcome


def _run_solver(system: MixedConstraintSystem, opts: VerifyOptions, deadline: Optional[float]) -> SolveOutcome:
    solver = opts.solver
    if solver is SolverKind.ENUMERATE:
        res = solve_enumerate(system, opts.enumerate_cap)
        return SolveOutcome(
            lower_bound=res.lower_bound,
            complete=True,
            candidates=[res.y] if res.y is not None else [],
            detail={"evaluated": res.evaluated},
            infeasible=res.status == "infeasible",
        )

    if solver is SolverKind.BNB:
        res = solve_branch_and_bound(system, deadline=deadline)
        return SolveOutcome(
            lower_bound=res.lower_bound,
            complete=res.complete,
            candidates=[res.y] if res.y is not None else [],
            budget_exhausted=not res.complete,
            detail={"evaluated": res.evaluated},
            infeasible=res.status == "infeasible" and res.complete,
        )

    if solver is SolverKind.BENDERS:
        res = benders.run(
            system,
            tol=opts.benders_tol,
            max_iter=opts.benders_max_iter,
            mode=opts.master_mode,
            anneal_cfg=opts.anneal,
            deadline=deadline,
        )
        return SolveOutcome(
            lower_bound=res.lower_bound,
            complete=res.status != "incomplete",
            candidates=[res.y] if res.y is not None else [],
            budget_exhausted=res.status == "incomplete",
            detail={"iterations": res.iterations, "cuts": len(res.cuts), "status": res.status},
            infeasible=res.status == "infeasible",
        )

    enc = make_encoding(system, opts.bits_per_var, opts.bits_per_slack)
    instance = assemble(system, enc, choose_rho(system, enc))
    if solver is SolverKind.QUBO_EXACT:
        res = solve_exhaustive(instance)
    else:
        res = solve_sa(instance, replace(opts.anneal, budget_ms=_remaining_ms(deadline)))
    candidates = []
    seen = set()
    for bits in [res.bits] + list(res.restart_bits):
        key = bits.tobytes()
        if key in seen:
            continue
        seen.add(key)
        candidates.append(decode(instance, bits).y)
    return SolveOutcome(
        lower_bound=-np.inf,
        complete=False,
        candidates=candidates,
        budget_exhausted=res.budget_exhausted,
        detail={"energy": res.energy, "rho": instance.rho, "spins": enc.spins()},
    )


_BOUNDS_CACHE = LRUCache(config.BOUNDS_CACHE_SIZE)
_BOUNDS_LOCK = threading.Lock()


def network_fingerprint(net: Network) -> str:
    h = hashlib.sha1()
    for layer in net.layers:
        h.update(layer.activation.value.encode())
        h.update(np.ascontiguousarray(layer.weights, dtype=float).tobytes())
        h.update(np.ascontiguousarray(layer.bias, dtype=float).tobytes())
    return h.hexdigest()


def cached_bounds(net: Network, x0: np.ndarray, eps: float) -> IntervalBounds:
    k = (network_fingerprint(net), np.asarray(x0, dtype=float).tobytes(), float(eps))
    with _BOUNDS_LOCK:
        cached = _BOUNDS_CACHE.get(k)
    if cached is not None:
        return cached

    bounds = propagate(net, x0, eps)
    with _BOUNDS_LOCK:
        _BOUNDS_CACHE[k] = bounds
    return bounds


def ibp_margin_bounds(bounds: IntervalBounds, label: int) -> Dict[int, float]:
    """Per target, the interval lower bound on logit[label] - logit[target]."""
    lo, hi = bounds.a_lo[-1], bounds.a_hi[-1]
    return {t: float(lo[label] - hi[t]) for t in range(len(lo)) if t != label}


def _finite(value: Optional[float]) -> Optional[float]:
    if value is None or not np.isfinite(value):
        return None
    return float(value)


@dataclass
class SampleVerdict:
    index: int
    label: int
    eps: float
    verdict: Verdict
    lower_bound: float
    upper_bound: float
    solver: str
    model: int
    spins: Optional[int] = None
    counterexample: Optional[np.ndarray] = None
    replayed_margin: Optional[float] = None
    cut: Optional[int] = None
    wall_ms: float = 0.0
    budget_exhausted: bool = False
    targets: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "label": self.label,
            "eps": self.eps,
            "verdict": self.verdict.value,
            "lower_bound": _finite(self.lower_bound),
            "upper_bound": _finite(self.upper_bound),
            "solver": self.solver,
            "model": self.model,
            "spins": self.spins,
            "counterexample": None if self.counterexample is None else self.counterexample.tolist(),
            "replayed_margin": self.replayed_margin,
            "cut": self.cut,
            "wall_ms": self.wall_ms,
            "budget_exhausted": self.budget_exhausted,
            "targets": [{k: _finite(v) if isinstance(v, float) else v for k, v in t.items()} for t in self.targets],
        }


def _replay(net: Network, bounds: IntervalBounds, system: MixedConstraintSystem, y: np.ndarray, label: int):
    x = np.clip(system.decode_input(y), bounds.input_lo, bounds.input_hi)
    return x, logit_margin(forward_eval(net, x), label)


def _cut_for(net: Network, sample: Sample, eps: float, bounds: IntervalBounds, opts: VerifyOptions) -> int:
    if opts.partition_at is not None:
        return opts.partition_at
    if opts.spin_budget is None or net.depth < 2:
        return 0
    return suggest_cut(
        net,
        opts.spin_budget,
        sample.x0,
        eps,
        label=sample.label,
        model=opts.model,
        segments=opts.segments,
        bits_per_var=opts.bits_per_var,
        bits_per_slack=opts.bits_per_slack,
        one_sided=opts.one_sided,
        bounds=bounds,
    )


def verify_sample(
    net: Network,
    sample: Sample,
    eps: float,
    opts: Optional[VerifyOptions] = None,
    index: int = 0,
) -> SampleVerdict:
    """Classifies one sample as robust, nonrobust (with a replayed counterexample) or unknown.

    Nonrobust always comes with an input of the ball whose replayed margin is <= 0; robust always comes with a
    certified lower bound > 0 on the margin over the whole ball.
    """
    opts = opts or VerifyOptions()
    start = time.monotonic()
    deadline = None if opts.budget_ms is None else start + opts.budget_ms / 1000.0
    sample.check(net)
    check_model(net, opts.model)
    if eps < 0:
        raise EncodingError(f"eps must be >= 0, got {eps}")
    x0 = np.asarray(sample.x0, dtype=float)
    label = sample.label

    record = SampleVerdict(
        index=index,
        label=label,
        eps=float(eps),
        verdict=Verdict.UNKNOWN,
        lower_bound=-np.inf,
        upper_bound=np.inf,
        solver=opts.solver.value,
        model=opts.model,
    )

    def _done(r: SampleVerdict) -> SampleVerdict:
        if r.lower_bound > r.upper_bound + BOUND_TOL * max(1.0, abs(r.upper_bound)):
            raise InvariantViolation(
                f"certified lower bound {r.lower_bound:.6g} exceeds the replayed margin {r.upper_bound:.6g}",
                payload={"index": index, "eps": float(eps), "solver": r.solver},
            )
        r.wall_ms = 1000.0 * (time.monotonic() - start)
        logger.info(
            f"sample={index} eps={eps:g} verdict={r.verdict.value} lb={r.lower_bound:.6g} ub={r.upper_bound:.6g} "
            f"solver={r.solver} spins={r.spins} wall={r.wall_ms:.0f}ms"
        )
        return r

    nominal = logit_margin(forward_eval(net, x0), label)
    record.upper_bound = nominal
    bounds = cached_bounds(net, x0, eps)
    per_target_lower = ibp_margin_bounds(bounds, label)
    record.lower_bound = min(per_target_lower.values())

    if nominal <= 0:
        record.verdict = Verdict.NONROBUST
        record.counterexample = x0
        record.replayed_margin = nominal
        record.solver = "nominal"
        return _done(record)

    if opts.ibp_screen and certify_ibp(bounds, label):
        record.verdict = Verdict.ROBUST
        record.solver = "ibp"
        return _done(record)

    cut = _cut_for(net, sample, eps, bounds, opts)
    if cut:
        record.cut = cut

        def _suffix_solver(system: MixedConstraintSystem) -> Tuple[float, bool]:
            out = solve_system(system, opts, deadline)
            return (out.lower_bound if opts.solver.certifies else -np.inf), out.complete

        report = split_verify(
            net,
            x0,
            eps,
            cut,
            label,
            _suffix_solver,
            model=opts.model,
            segments=opts.segments,
            bits_per_var=opts.bits_per_var,
            bits_per_slack=opts.bits_per_slack,
            one_sided=opts.one_sided,
            bounds=bounds,
        )
        record.spins = report.suffix_spins
        record.targets = report.per_target
        record.lower_bound = max(record.lower_bound, report.lower_bound)
        record.verdict = Verdict.ROBUST if record.lower_bound > 0 else Verdict.UNKNOWN
        return _done(record)

    best_x, best_margin = None, nominal
    spins = 0
    for target in target_classes(net, label):
        if deadline is not None and time.monotonic() > deadline:
            record.budget_exhausted = True
            break
        system = build_query(net, bounds, label, target, opts.model, opts.segments, opts.one_sided)
        spins = max(spins, spin_count(system, opts.bits_per_var, opts.bits_per_slack))
        out = solve_system(system, opts, deadline)
        record.budget_exhausted = record.budget_exhausted or out.budget_exhausted
        if opts.solver.certifies:
            per_target_lower[target] = max(per_target_lower[target], out.lower_bound)
        for y in out.candidates:
            x, margin = _replay(net, bounds, system, y, label)
            if margin < best_margin:
                best_x, best_margin = x, margin
        record.targets.append(
            {
                "target": target,
                "lower_bound": float(out.lower_bound),
                "complete": out.complete,
                "candidates": len(out.candidates),
                **out.detail,
            }
        )
        logger.debug(f"sample={index} target={target}: lb={out.lower_bound:.6g} best_margin={best_margin:.6g}")
        if best_margin <= 0:
            break

    record.spins = spins
    record.lower_bound = min(per_target_lower.values())
    record.upper_bound = best_margin
    if best_margin <= 0:
        record.verdict = Verdict.NONROBUST
        record.counterexample = best_x
        record.replayed_margin = best_margin
    elif record.lower_bound > 0:
        record.verdict = Verdict.ROBUST
    return _done(record)


def margin_bounds(opts: Optional[VerifyOptions] = None):
    """A transfer verifier: (net, sample, eps) -> (certified lower bound, replayed upper bound) on the margin."""
    opts = opts or VerifyOptions()

    def _verifier(net: Network, sample: Sample, eps: float) -> Tuple[float, float]:
        res = verify_sample(net, sample, eps, replace(opts, ibp_screen=False, partition_at=None, spin_budget=None))
        return res.lower_bound, res.upper_bound

    return _verifier
