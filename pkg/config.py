import os
import subprocess
from pathlib import Path

import yaml

from utils import strtobool

ROOT_DIR = Path(__file__).parent.absolute()
CONFIG_DIR = Path(os.getenv("CERTIQ_CONFIG_DIR", ROOT_DIR / "config"))


def _version() -> str:
    try:
        return (
            subprocess.check_output(["git", "describe", "--always"], stderr=subprocess.DEVNULL)
            .split()[0]
            .decode("utf-8")
        )
    except (OSError, subprocess.CalledProcessError, IndexError):
        return "dev"


VERSION = _version()

DEBUG_MODE = strtobool(os.getenv("CERTIQ_DEBUG", "false"))

conf = {}
_conf_path = CONFIG_DIR / "certiq.yml"
if _conf_path.exists():
    with open(_conf_path) as f:
        conf = yaml.safe_load(f) or {}

# QUBO bit budget per continuous column and per inequality slack
BITS_PER_VAR = int(conf.get("bits_per_var", 6))
BITS_PER_SLACK = int(conf.get("bits_per_slack", 4))

# Segments per neuron for the step-bound encoding
SEGMENTS = int(conf.get("segments", 2))
# Model 2 keeps only the output trajectories the margin objective reads
ONE_SIDED = bool(conf.get("one_sided", False))

# Per-sample time budget, 0 disables it
BUDGET_MS = float(conf.get("budget_ms", 5000))

BENDERS_TOL = float(conf.get("benders_tol", 1e-6))
BENDERS_MAX_ITER = int(conf.get("benders_max_iter", 500))

anneal_conf = conf.get("anneal", {})
ANNEAL_SWEEPS = int(anneal_conf.get("sweeps", 2000))
ANNEAL_RESTARTS = int(anneal_conf.get("restarts", 20))
ANNEAL_T_FINAL_RATIO = float(anneal_conf.get("t_final_ratio", 1e-3))

WORKERS = int(os.getenv("CERTIQ_WORKERS", conf.get("workers", os.cpu_count() or 1)))

SPIN_BUDGET = conf.get("spin_budget")
if SPIN_BUDGET is not None:
    SPIN_BUDGET = int(SPIN_BUDGET)

# Interval bounds memoized per (network, input, eps)
BOUNDS_CACHE_SIZE = int(conf.get("bounds_cache_size", 1024))


def snapshot() -> dict:
    return {
        "version": VERSION,
        "bits_per_var": BITS_PER_VAR,
        "bits_per_slack": BITS_PER_SLACK,
        "segments": SEGMENTS,
        "one_sided": ONE_SIDED,
        "budget_ms": BUDGET_MS,
        "benders_tol": BENDERS_TOL,
        "benders_max_iter": BENDERS_MAX_ITER,
        "anneal": {
            "sweeps": ANNEAL_SWEEPS,
            "restarts": ANNEAL_RESTARTS,
            "t_final_ratio": ANNEAL_T_FINAL_RATIO,
        },
        "workers": WORKERS,
        "spin_budget": SPIN_BUDGET,
    }
