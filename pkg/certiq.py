"""certiq command line: datasets, fixture training, bounds, encodings, verification and campaigns."""
import json
import logging
import sys
from dataclasses import replace
from typing import List
from typing import Optional

import click
import numpy as np

import config
from core.anneal import AnnealConfig
from core.anneal import solve_exhaustive
from core.anneal import solve_sa
from core.campaign import run_campaign
from core.errors import Error
from core.errors import InvariantViolation
from core.intervals import propagate
from core.network import ActivationKind
from core.network import Sample
from core.network import dump_network
from core.network import load_network
from core.network import magnitude_mask
from core.qubo import assemble
from core.qubo import choose_rho
from core.qubo import dump_qubo
from core.qubo import load_qubo
from core.qubo import make_encoding
from core.queries import SolverKind
from core.queries import build_query
from core.transfer import transfer_campaign
from core.verify import VerifyOptions
from core.verify import margin_bounds
from core.verify import verify_sample
from utils import now
from utils.datasets import dump_dataset
from utils.datasets import gen_dataset
from utils.datasets import load_csv
from utils.datasets import to_samples
from utils.reports import load_mask
from utils.reports import write_report
from utils.train import train_fixture

logger = logging.getLogger(__name__)

SOLVERS = [s.value for s in SolverKind]
ONE_SIDED_OPTION = click.option(
    "--one-sided/--two-sided",
    default=config.ONE_SIDED,
    show_default=True,
    help="Model 2: keep only the output trajectories the margin reads.",
)


def _floats(raw: str) -> List[float]:
    try:
        return [float(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got {raw!r}")


def _ints(raw: Optional[str]) -> Optional[List[int]]:
    if raw is None:
        return None
    return [int(v) for v in _floats(raw)]


def _options(
    model: int,
    solver: str,
    segments: Optional[int],
    budget_ms: Optional[float],
    seed: int,
    partition_at: Optional[int] = None,
    spin_budget: Optional[int] = None,
    one_sided: bool = config.ONE_SIDED,
) -> VerifyOptions:
    opts = VerifyOptions(model=model, solver=SolverKind(solver), partition_at=partition_at)
    return replace(
        opts,
        segments=segments or opts.segments,
        one_sided=one_sided,
        budget_ms=(budget_ms or None) if budget_ms is not None else opts.budget_ms,
        spin_budget=spin_budget if spin_budget is not None else opts.spin_budget,
        anneal=replace(opts.anneal, seed=seed),
    )


@click.group()
@click.option("--debug", is_flag=True, default=False, help="Log at DEBUG level.")
def cli(debug: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if debug or config.DEBUG_MODE else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@cli.command()
@click.option("--kind", type=click.Choice(["two-moons", "csv"]), default="two-moons")
@click.option("--n", type=int, default=100)
@click.option("--seed", type=int, default=0)
@click.option("--path", type=click.Path(exists=True, dir_okay=False), default=None, help="Source CSV.")
@click.option("--classes", default=None, help="Comma-separated class subset, e.g. 0,1.")
@click.option("--balanced", type=int, default=None, help="Take that many rows alternating between classes.")
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def gen(kind: str, n: int, seed: int, path: Optional[str], classes: Optional[str], balanced: Optional[int], out: str):
    """Generate (or subset) a dataset."""
    X, y = gen_dataset(kind, n=n, seed=seed, path=path, classes=_ints(classes), balanced=balanced)
    dump_dataset(X, y, out)
    click.echo(f"{len(y)} samples written to {out}")


@cli.command()
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--arch", default="2-8-8-2", show_default=True)
@click.option("--activation", type=click.Choice([a.value for a in ActivationKind]), default="relu")
@click.option("--epochs", type=int, default=100, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def train(data: str, arch: str, activation: str, epochs: int, lr: float, seed: int, out: str):
    """Train a fixture network with full-batch Adam."""
    X, y = load_csv(data)
    res = train_fixture(X, y, arch, ActivationKind(activation), epochs=epochs, lr=lr, seed=seed)
    dump_network(res.net, out)
    click.echo(f"train accuracy {res.accuracy:.4f}, network written to {out}")


@cli.command()
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--x0", required=True, help="Comma-separated input.")
@click.option("--eps", type=float, required=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def bounds(net_path: str, x0: str, eps: float, out: Optional[str]):
    """Interval bounds of every layer over the eps-ball."""
    net = load_network(net_path)
    write_report(propagate(net, np.array(_floats(x0)), eps).to_dict(), out)


@cli.command()
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--x0", required=True)
@click.option("--eps", type=float, required=True)
@click.option("--label", type=int, required=True)
@click.option("--target", type=int, required=True)
@click.option("--model", type=click.Choice(["1", "2"]), default="1")
@click.option("--segments", type=int, default=None)
@ONE_SIDED_OPTION
@click.option("--bits-per-var", type=int, default=config.BITS_PER_VAR, show_default=True)
@click.option("--bits-per-slack", type=int, default=config.BITS_PER_SLACK, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True, help="QUBO coordinate file.")
def encode(
    net_path: str,
    x0: str,
    eps: float,
    label: int,
    target: int,
    model: str,
    segments: Optional[int],
    one_sided: bool,
    bits_per_var: int,
    bits_per_slack: int,
    out: str,
):
    """Encode one (label, target) query and write its QUBO."""
    net = load_network(net_path)
    b = propagate(net, np.array(_floats(x0)), eps)
    system = build_query(net, b, label, target, int(model), segments or config.SEGMENTS, one_sided)
    enc = make_encoding(system, bits_per_var, bits_per_slack)
    instance = assemble(system, enc, choose_rho(system, enc))
    with open(out, "w") as f:
        dump_qubo(instance, f)
    write_report(
        {"system": system.to_dict(), "n_beta": system.n_beta, "spins": enc.spins(), "rho": instance.rho}, None
    )


@cli.command("solve-qubo")
@click.option("--qubo", "qubo_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--exact", is_flag=True, default=False, help="Exhaustive search instead of annealing.")
@click.option("--sweeps", type=int, default=config.ANNEAL_SWEEPS, show_default=True)
@click.option("--restarts", type=int, default=config.ANNEAL_RESTARTS, show_default=True)
@click.option("--seed", type=int, default=0)
@click.option("--budget-ms", type=float, default=None)
def solve_qubo(qubo_path: str, exact: bool, sweeps: int, restarts: int, seed: int, budget_ms: Optional[float]):
    """Minimize a QUBO coordinate file."""
    with open(qubo_path) as f:
        instance = load_qubo(f)
    if exact:
        res = solve_exhaustive(instance)
    else:
        cfg = AnnealConfig(
            sweeps=sweeps,
            restarts=restarts,
            seed=seed,
            t_final_ratio=config.ANNEAL_T_FINAL_RATIO,
            budget_ms=budget_ms,
        )
        res = solve_sa(instance, cfg)
    write_report(res.to_dict(), None)


@cli.command()
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--x0", required=True)
@click.option("--label", type=int, required=True)
@click.option("--eps", type=float, required=True)
@click.option("--model", type=click.Choice(["1", "2"]), default="1")
@click.option("--solver", type=click.Choice(SOLVERS), default=SolverKind.BENDERS.value)
@click.option("--segments", type=int, default=None)
@ONE_SIDED_OPTION
@click.option("--budget-ms", type=float, default=None, help="0 disables the budget.")
@click.option("--partition-at", type=int, default=None)
@click.option("--spin-budget", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def verify(
    net_path: str,
    x0: str,
    label: int,
    eps: float,
    model: str,
    solver: str,
    segments: Optional[int],
    one_sided: bool,
    budget_ms: Optional[float],
    partition_at: Optional[int],
    spin_budget: Optional[int],
    seed: int,
    out: Optional[str],
):
    """Verify a single sample."""
    net = load_network(net_path)
    opts = _options(int(model), solver, segments, budget_ms, seed, partition_at, spin_budget, one_sided)
    verdict = verify_sample(net, Sample(x0=np.array(_floats(x0)), label=label), eps, opts)
    write_report({"generated_at": now(), "options": opts.to_dict(), "sample": verdict.to_dict()}, out)


@cli.command()
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--eps", type=float, required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--sparsity", type=float, default=None, help="Magnitude pruning when no mask file is given.")
@click.option("--model", type=click.Choice(["1", "2"]), default="1")
@click.option("--solver", type=click.Choice(SOLVERS), default=SolverKind.BENDERS.value)
@click.option("--segments", type=int, default=None)
@ONE_SIDED_OPTION
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def transfer(
    net_path: str,
    data: str,
    eps: float,
    mask_path: Optional[str],
    sparsity: Optional[float],
    model: str,
    solver: str,
    segments: Optional[int],
    one_sided: bool,
    seed: int,
    out: Optional[str],
):
    """Verify a pruned network and transfer the certificates to the original one."""
    if (mask_path is None) == (sparsity is None):
        raise click.UsageError("pass exactly one of --mask and --sparsity")
    net = load_network(net_path)
    mask = load_mask(mask_path, net) if mask_path else magnitude_mask(net, sparsity)
    X, y = load_csv(data)
    opts = _options(int(model), solver, segments, None, seed, one_sided=one_sided)
    report = transfer_campaign(net, mask, to_samples(X, y), eps, margin_bounds(opts))
    write_report({"generated_at": now(), "eps": eps, **report.to_dict()}, out)


@cli.command()
@click.option("--net", "net_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--data", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--eps", "eps_grid", required=True, help="Comma-separated radii.")
@click.option("--model", type=click.Choice(["1", "2"]), default="1")
@click.option("--solver", type=click.Choice(SOLVERS), default=SolverKind.BENDERS.value)
@click.option("--segments", type=int, default=None)
@ONE_SIDED_OPTION
@click.option("--budget-ms", type=float, default=None, help="0 disables the budget.")
@click.option("--spin-budget", type=int, default=None)
@click.option("--workers", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def campaign(
    net_path: str,
    data: str,
    eps_grid: str,
    model: str,
    solver: str,
    segments: Optional[int],
    one_sided: bool,
    budget_ms: Optional[float],
    spin_budget: Optional[int],
    workers: Optional[int],
    seed: int,
    out: Optional[str],
):
    """Sweep an eps grid over a dataset."""
    net = load_network(net_path)
    X, y = load_csv(data)
    opts = _options(int(model), solver, segments, budget_ms, seed, spin_budget=spin_budget, one_sided=one_sided)
    report = run_campaign(net, to_samples(X, y), _floats(eps_grid), opts, workers=workers)
    doc = report.to_dict()
    write_report(doc, out)
    for row in doc["rows"]:
        click.echo(
            f"eps={row['eps']:g} certified_accuracy={row['certified_accuracy']:.3f} "
            f"vulnerable={row['vulnerable_samples']} spins={json.dumps(row['ising_spins'])}",
            err=True,
        )


def main() -> int:
    try:
        rv = cli.main(standalone_mode=False)
    except InvariantViolation as exc:
        logger.exception(f"internal invariant violated: {exc.message}")
        return 2
    except Error as exc:
        click.echo(f"error: {exc.message}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.Abort:
        return 1
    return rv if isinstance(rv, int) else 0


if __name__ == "__main__":
    sys.exit(main())
