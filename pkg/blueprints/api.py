import logging
from typing import Any

import flask
import numpy as np
from flask import current_app as app
from flask import jsonify
from flask import request

from core.anneal import AnnealConfig
from core.intervals import propagate
from core.network import Network
from core.network import Sample
from core.network import network_from_dict
from core.queries import SolverKind
from core.transfer import transfer_campaign
from core.verify import VerifyOptions
from core.verify import default_anneal
from core.verify import margin_bounds
from core.verify import verify_sample
from utils.reports import mask_from_dict

_logger = logging.getLogger(__name__)

blueprint = flask.Blueprint("api", __name__)


def _user_api_arg(key: str, **kwargs) -> Any:
    """Try to get the given key from the JSON body."""
    body = request.get_json(silent=True) or {}
    value = body.get(key)
    if value is None:
        if "default" in kwargs:
            return kwargs.get("default")

        raise ValueError(f"missing {key}")

    return value


def _net() -> Network:
    return network_from_dict(_user_api_arg("net"))


def _vector(key: str) -> np.ndarray:
    return np.array(_user_api_arg(key), dtype=float)


def _eps() -> float:
    eps = float(_user_api_arg("eps"))
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return eps


def _options() -> VerifyOptions:
    anneal = _user_api_arg("anneal", default={})
    default = default_anneal()
    return VerifyOptions(
        model=int(_user_api_arg("model", default=1)),
        solver=SolverKind(_user_api_arg("solver", default=SolverKind.BENDERS.value)),
        segments=int(_user_api_arg("segments", default=VerifyOptions.segments)),
        one_sided=bool(_user_api_arg("one_sided", default=VerifyOptions.one_sided)),
        partition_at=_user_api_arg("partition_at", default=None),
        spin_budget=_user_api_arg("spin_budget", default=None),
        anneal=AnnealConfig(
            sweeps=int(anneal.get("sweeps", default.sweeps)),
            restarts=int(anneal.get("restarts", default.restarts)),
            seed=int(anneal.get("seed", default.seed)),
        ),
    )


@blueprint.route("/bounds", methods=["POST"])
def api_bounds():
    net = _net()
    bounds = propagate(net, _vector("x0"), _eps())
    return jsonify(bounds.to_dict())


@blueprint.route("/verify", methods=["POST"])
def api_verify():
    net = _net()
    sample = Sample(x0=_vector("x0"), label=int(_user_api_arg("label")))
    opts = _options()
    app.logger.info(f"verify model={opts.model} solver={opts.solver.value} widths={net.widths}")
    verdict = verify_sample(net, sample, _eps(), opts)
    return jsonify(verdict.to_dict())


@blueprint.route("/transfer", methods=["POST"])
def api_transfer():
    net = _net()
    mask = mask_from_dict({"masks": _user_api_arg("mask")}, net)
    samples_raw = _user_api_arg("samples")
    labels = _user_api_arg("labels")
    if len(samples_raw) != len(labels):
        raise ValueError(f"got {len(samples_raw)} samples but {len(labels)} labels")
    samples = [Sample(x0=np.array(x, dtype=float), label=int(y)) for x, y in zip(samples_raw, labels)]
    report = transfer_campaign(net, mask, samples, _eps(), margin_bounds(_options()))
    return jsonify(report.to_dict())
