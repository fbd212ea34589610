"""Verification campaigns: every sample at every radius of an eps grid, aggregated per radius."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

import config
from core.errors import EncodingError
from core.errors import InvariantViolation
from core.network import Network
from core.network import Sample
from core.network import forward_eval
from core.network import logit_margin
from core.verify import SampleVerdict
from core.verify import Verdict
from core.verify import VerifyOptions
from core.verify import verify_sample
from utils import now

logger = logging.getLogger(__name__)

BALL_TOL = 1e-9


@dataclass
class EpsRow:
    eps: float
    verdicts: List[SampleVerdict]
    vulnerable_samples: int
    certified_accuracy: float
    unknown: int
    ising_spins: Dict[str, Optional[float]]

    def to_dict(self, with_samples: bool = True) -> Dict[str, Any]:
        d: Dict[str, Any] = {
            "eps": self.eps,
            "vulnerable_samples": self.vulnerable_samples,
            "certified_accuracy": self.certified_accuracy,
            "unknown": self.unknown,
            "ising_spins": self.ising_spins,
        }
        if with_samples:
            d["samples"] = [v.to_dict() for v in self.verdicts]
        return d


@dataclass
class CampaignReport:
    rows: List[EpsRow]
    options: VerifyOptions
    network: Dict[str, Any]
    generated_at: str = field(default_factory=now)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "generated_at": self.generated_at,
            "config": {**config.snapshot(), **self.options.to_dict()},
            "network": self.network,
            "rows": [row.to_dict() for row in self.rows],
        }


def check_counterexample(net: Network, sample: Sample, eps: float, verdict: SampleVerdict) -> None:
    """A nonrobust verdict must carry an input of the ball whose margin replays to <= 0."""
    x = verdict.counterexample
    if x is None:
        raise InvariantViolation(f"sample {verdict.index} is nonrobust without a counterexample")
    if np.max(np.abs(x - sample.x0), initial=0.0) > eps + BALL_TOL:
        raise InvariantViolation(
            f"counterexample of sample {verdict.index} lies outside the ball", payload={"index": verdict.index}
        )
    margin = logit_margin(forward_eval(net, x), sample.label)
    if margin > 0:
        raise InvariantViolation(
            f"counterexample of sample {verdict.index} replays to margin {margin}", payload={"index": verdict.index}
        )


def spin_stats(verdicts: Sequence[SampleVerdict]) -> Dict[str, Optional[float]]:
    """Average/max/min spin count over the samples that reached a solver."""
    spins = [v.spins for v in verdicts if v.spins is not None]
    if not spins:
        return {"average": None, "max": None, "min": None}
    return {"average": float(np.mean(spins)), "max": int(max(spins)), "min": int(min(spins))}


def aggregate(eps: float, verdicts: List[SampleVerdict]) -> EpsRow:
    robust = sum(1 for v in verdicts if v.verdict is Verdict.ROBUST)
    return EpsRow(
        eps=eps,
        verdicts=verdicts,
        vulnerable_samples=sum(1 for v in verdicts if v.verdict is Verdict.NONROBUST),
        certified_accuracy=robust / len(verdicts),
        unknown=sum(1 for v in verdicts if v.verdict is Verdict.UNKNOWN),
        ising_spins=spin_stats(verdicts),
    )


def run_campaign(
    net: Network,
    samples: Sequence[Sample],
    eps_grid: Sequence[float],
    opts: Optional[VerifyOptions] = None,
    workers: Optional[int] = None,
) -> CampaignReport:
    if not samples:
        raise EncodingError("a campaign needs at least one sample")
    if not eps_grid:
        raise EncodingError("a campaign needs at least one radius")
    opts = opts or VerifyOptions()
    workers = workers or config.WORKERS
    for sample in samples:
        sample.check(net)

    rows = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for eps in eps_grid:
            futures = [pool.submit(verify_sample, net, s, eps, opts, i) for i, s in enumerate(samples)]
            verdicts = [f.result() for f in futures]
            for sample, verdict in zip(samples, verdicts):
                if verdict.verdict is Verdict.NONROBUST:
                    check_counterexample(net, sample, eps, verdict)
            row = aggregate(float(eps), verdicts)
            logger.info(
                f"eps={eps:g}: certified_accuracy={row.certified_accuracy:.3f} "
                f"vulnerable={row.vulnerable_samples} unknown={row.unknown} spins={row.ising_spins}"
            )
            rows.append(row)

    return CampaignReport(
        rows=rows,
        options=opts,
        network={"widths": net.widths, "activation": net.hidden_activation.value},
    )
