import json
import sys

import numpy as np
import pytest
from click.testing import CliRunner

import certiq
from core.errors import InvariantViolation
from core.network import dump_network
from core.network import forward_eval
from core.network import load_network


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def net_path(tmp_path, make_net):
    path = str(tmp_path / "net.json")
    dump_network(make_net([2, 4, 2], seed=11), path)
    return path


@pytest.fixture
def data_path(tmp_path, runner):
    path = str(tmp_path / "moons.csv")
    result = runner.invoke(certiq.cli, ["gen", "--kind", "two-moons", "--n", "6", "--seed", "1", "--out", path])
    assert result.exit_code == 0, result.output
    return path


def test_gen_writes_a_header_and_rows(data_path):
    with open(data_path) as f:
        lines = f.read().splitlines()
    assert lines[0] == "x0,x1,label"
    assert len(lines) == 7


def test_train(runner, tmp_path, data_path):
    out = str(tmp_path / "trained.json")
    result = runner.invoke(
        certiq.cli, ["train", "--data", data_path, "--arch", "2-4-2", "--epochs", "3", "--out", out]
    )
    assert result.exit_code == 0, result.output
    assert load_network(out).widths == [2, 4, 2]


def test_bounds(runner, net_path):
    result = runner.invoke(certiq.cli, ["bounds", "--net", net_path, "--x0", "0.1,0.2", "--eps", "0.1"])
    assert result.exit_code == 0, result.output
    doc = json.loads(result.stdout)
    assert doc["input"]["lo"] == pytest.approx([0.0, 0.1])
    assert len(doc["layers"]) == 2


def test_encode_then_solve(runner, tmp_path, net_path):
    qubo = str(tmp_path / "q.txt")
    result = runner.invoke(
        certiq.cli,
        ["encode", "--net", net_path, "--x0", "0.1,0.2", "--eps", "0.1", "--label", "0", "--target", "1",
         "--bits-per-var", "2", "--bits-per-slack", "2", "--out", qubo],
    )
    assert result.exit_code == 0, result.output
    doc = json.loads(result.stdout)
    assert doc["spins"]["total"] > 0
    result = runner.invoke(
        certiq.cli, ["solve-qubo", "--qubo", qubo, "--sweeps", "5", "--restarts", "1", "--seed", "3"]
    )
    assert result.exit_code == 0, result.output
    assert len(json.loads(result.stdout)["bits"]) == doc["spins"]["total"]


def test_encode_model2_is_two_sided_unless_asked(runner, tmp_path, net_path):
    base = ["encode", "--net", net_path, "--x0", "0.1,0.2", "--eps", "0.1", "--label", "0", "--target", "1",
            "--model", "2", "--segments", "2", "--bits-per-var", "2", "--bits-per-slack", "2"]
    docs = {}
    for flag in ("--two-sided", "--one-sided"):
        out = str(tmp_path / f"q{flag}.txt")
        result = runner.invoke(certiq.cli, base + [flag, "--out", out])
        assert result.exit_code == 0, result.output
        docs[flag] = json.loads(result.stdout)
    default = runner.invoke(certiq.cli, base + ["--out", str(tmp_path / "q.txt")])
    assert json.loads(default.stdout)["n_beta"] == docs["--two-sided"]["n_beta"]
    # lower and upper trajectory selectors for the 4 + 2 neurons, 2 segments each
    assert docs["--two-sided"]["n_beta"] == 2 * 2 * (4 + 2)
    assert docs["--one-sided"]["n_beta"] < docs["--two-sided"]["n_beta"]


def test_verify(runner, tmp_path, net_path):
    net = load_network(net_path)
    label = int(np.argmax(forward_eval(net, np.array([0.1, 0.2]))))
    out = str(tmp_path / "verdict.json")
    result = runner.invoke(
        certiq.cli,
        ["verify", "--net", net_path, "--x0", "0.1,0.2", "--label", str(label), "--eps", "0.05",
         "--solver", "enumerate", "--out", out],
    )
    assert result.exit_code == 0, result.output
    with open(out) as f:
        doc = json.load(f)
    assert doc["sample"]["verdict"] in ("robust", "nonrobust")
    assert doc["options"]["solver"] == "enumerate"
    assert doc["options"]["one_sided"] is False


def test_campaign(runner, tmp_path, net_path, data_path):
    out = str(tmp_path / "campaign.json")
    result = runner.invoke(
        certiq.cli,
        ["campaign", "--net", net_path, "--data", data_path, "--eps", "0,0.05", "--solver", "enumerate",
         "--workers", "2", "--out", out],
    )
    assert result.exit_code == 0, result.output
    with open(out) as f:
        doc = json.load(f)
    assert [row["eps"] for row in doc["rows"]] == [0.0, 0.05]
    assert all(len(row["samples"]) == 6 for row in doc["rows"])


def test_transfer(runner, tmp_path, net_path, data_path):
    out = str(tmp_path / "transfer.json")
    result = runner.invoke(
        certiq.cli,
        ["transfer", "--net", net_path, "--data", data_path, "--eps", "0.02", "--sparsity", "0.25",
         "--solver", "enumerate", "--out", out],
    )
    assert result.exit_code == 0, result.output
    with open(out) as f:
        doc = json.load(f)
    assert len(doc["certificates"]) == 6
    assert doc["ca_lower"] <= doc["ca_upper"]


def test_transfer_needs_exactly_one_mask_source(runner, net_path, data_path):
    result = runner.invoke(certiq.cli, ["transfer", "--net", net_path, "--data", data_path, "--eps", "0.1"])
    assert result.exit_code == 2


def test_main_exit_codes(monkeypatch, net_path):
    args = ["certiq", "verify", "--net", net_path, "--x0", "0.1,0.2", "--label", "0", "--eps", "0.1"]
    monkeypatch.setattr(sys, "argv", args[:2])
    assert certiq.main() == 2

    # label outside the logits
    monkeypatch.setattr(sys, "argv", args[:7] + ["7"] + args[8:])
    assert certiq.main() == 1

    def _broken(*a, **kw):
        raise InvariantViolation("replayed margin is positive")

    monkeypatch.setattr(certiq, "verify_sample", _broken)
    monkeypatch.setattr(sys, "argv", args)
    assert certiq.main() == 2
