import numpy as np
import pytest

from app import app
from core.network import forward_eval
from core.network import network_to_dict


@pytest.fixture
def client():
    app.config["TESTING"] = True
    with app.test_client() as c:
        yield c


@pytest.fixture
def net(make_net):
    return make_net([2, 4, 2], seed=11)


def _label(net, x0):
    return int(np.argmax(forward_eval(net, np.array(x0))))


def test_index(client):
    resp = client.get("/")
    assert resp.status_code == 200
    assert resp.get_json()["name"] == "certiq"
    assert resp.headers["X-Powered-By"].startswith("certiq/")
    assert len(resp.headers["X-Request-ID"]) == 32


def test_bounds(client, net):
    resp = client.post("/api/bounds", json={"net": network_to_dict(net), "x0": [0.1, 0.2], "eps": 0.1})
    assert resp.status_code == 200
    doc = resp.get_json()
    assert doc["input"]["hi"] == pytest.approx([0.2, 0.3])


def test_verify(client, net):
    x0 = [0.1, 0.2]
    body = {"net": network_to_dict(net), "x0": x0, "label": _label(net, x0), "eps": 0.05, "solver": "enumerate"}
    resp = client.post("/api/verify", json=body)
    assert resp.status_code == 200
    assert resp.get_json()["verdict"] in ("robust", "nonrobust")


def test_transfer(client, net):
    xs = [[0.1, 0.2], [-0.5, 0.4]]
    body = {
        "net": network_to_dict(net),
        "mask": [np.ones((4, 2)).tolist(), np.ones((2, 4)).tolist()],
        "samples": xs,
        "labels": [_label(net, x) for x in xs],
        "eps": 0.02,
        "solver": "enumerate",
    }
    resp = client.post("/api/transfer", json=body)
    assert resp.status_code == 200
    doc = resp.get_json()
    # nothing pruned: the certificates carry over unchanged
    assert all(c["tau"] == 0.0 for c in doc["certificates"])


def test_missing_field_is_a_bad_request(client, net):
    resp = client.post("/api/verify", json={"net": network_to_dict(net), "x0": [0.1, 0.2]})
    assert resp.status_code == 400
    doc = resp.get_json()
    assert "label" in doc["message"]
    assert doc["request_id"] == resp.headers["X-Request-ID"]


def test_domain_errors_carry_their_payload(client, net):
    resp = client.post("/api/bounds", json={"net": network_to_dict(net), "x0": [0.1], "eps": 0.1})
    assert resp.status_code == 400
    assert "request_id" in resp.get_json()


def test_unknown_solver(client, net):
    body = {"net": network_to_dict(net), "x0": [0.1, 0.2], "label": 0, "eps": 0.1, "solver": "quantum"}
    resp = client.post("/api/verify", json=body)
    assert resp.status_code == 400
