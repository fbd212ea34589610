import numpy as np
import pytest

from core.errors import DatasetError
from core.errors import TrainingDivergedError
from core.network import ActivationKind
from utils.train import accuracy
from utils.train import cross_entropy
from utils.train import init_network
from utils.train import parse_arch
from utils.train import train_fixture


@pytest.fixture
def blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal([-2.0, 0.0], 0.3, size=(20, 2)), rng.normal([2.0, 0.0], 0.3, size=(20, 2))])
    y = np.array([0] * 20 + [1] * 20)
    return X, y


def test_parse_arch():
    assert parse_arch("2-8-8-2") == [2, 8, 8, 2]
    for bad in ("2", "2-x-2", "2-0-2"):
        with pytest.raises(DatasetError):
            parse_arch(bad)


def test_cross_entropy():
    logits = np.array([[0.0, 0.0]])
    assert cross_entropy(logits, np.array([0])) == pytest.approx(np.log(2.0))
    assert cross_entropy(np.array([[1000.0, 0.0]]), np.array([0])) == pytest.approx(0.0)


@pytest.mark.parametrize("activation", [ActivationKind.RELU, ActivationKind.TANH])
def test_separable_blobs_are_learned(blobs, activation):
    X, y = blobs
    result = train_fixture(X, y, "2-8-2", activation, epochs=200, lr=0.05, seed=1)
    assert result.accuracy == 1.0
    assert result.losses[-1] < result.losses[0]
    assert accuracy(result.net, X, y) == result.accuracy


def test_zero_epochs_keep_the_initialisation(blobs):
    X, y = blobs
    result = train_fixture(X, y, "2-4-2", epochs=0, seed=3)
    init = init_network([2, 4, 2], ActivationKind.RELU, 3)
    for a, b in zip(result.net.layers, init.layers):
        assert np.array_equal(a.weights, b.weights)
    assert result.losses == []


def test_training_is_deterministic(blobs):
    X, y = blobs
    a = train_fixture(X, y, "2-4-2", epochs=20, seed=7)
    b = train_fixture(X, y, "2-4-2", epochs=20, seed=7)
    assert a.losses == b.losses


def test_divergence_is_reported(blobs):
    X, y = blobs
    with np.errstate(all="ignore"):
        with pytest.raises(TrainingDivergedError):
            train_fixture(X, y, "2-4-2", epochs=5, lr=1e300)


def test_bad_training_data(blobs):
    X, y = blobs
    with pytest.raises(DatasetError):
        train_fixture(X, y, "3-4-2")
    with pytest.raises(DatasetError):
        train_fixture(X, y + 5, "2-4-2")
    with pytest.raises(DatasetError):
        train_fixture(X, y[:-1], "2-4-2")
