"""Shared pytest fixtures; living at the root also puts the repository on sys.path for the tests."""
from typing import Sequence

import numpy as np
import pytest

from core.network import ActivationKind
from core.network import Network
from core.system import MixedConstraintSystem
from core.system import RowBuilder
from core.system import VariableLayout


def _make_net(
    widths: Sequence[int],
    activation: ActivationKind = ActivationKind.RELU,
    seed: int = 0,
    scale: float = 1.0,
) -> Network:
    rng = np.random.default_rng(seed)
    weights = [scale * rng.standard_normal((o, i)) for i, o in zip(widths[:-1], widths[1:])]
    biases = [0.5 * scale * rng.standard_normal(o) for o in widths[1:]]
    return Network.from_arrays(weights, biases, activation)


@pytest.fixture
def make_net():
    """Factory for seeded random networks, `make_net([2, 3, 2], ActivationKind.RELU, seed=1)`."""
    return _make_net


@pytest.fixture
def tiny_net():
    """relu(2x - 1), single logit."""
    return Network.from_arrays([[[2.0]], [[1.0]]], [[-1.0], [0.0]], ActivationKind.RELU)


@pytest.fixture
def relu_121():
    """1-2-1 relu net whose neurons all straddle their kink on the ball B(0, 1)."""
    return Network.from_arrays([[[1.0], [-1.0]], [[1.0, 1.0]]], [[0.0, 0.5], [0.0]], ActivationKind.RELU)


@pytest.fixture
def sigmoid_121():
    return Network.from_arrays([[[1.0], [-2.0]], [[1.0, -1.0]]], [[0.0, 0.5], [0.1]], ActivationKind.SIGMOID)


def _toy_system(rows, y_hi: float = 2.0) -> MixedConstraintSystem:
    """min y over [0, y_hi] with one two-way selector group and rows `-y <= d0 + D beta`, given as (d0, D)."""
    layout = VariableLayout()
    layout.add_block("x", 0, [0], [0.0], [y_hi])
    layout.add_group(1, 0, "toy", [True, True])
    eq = RowBuilder(1, 2)
    ineq = RowBuilder(1, 2)
    eq.add({}, 1.0, {0: -1.0, 1: -1.0}, kind="one-hot")
    for d0, coefs in rows:
        ineq.add({0: -1.0}, d0, dict(enumerate(coefs)), kind="toy")
    A, b0, B, eq_kinds = eq.build()
    C, d0, D, ineq_kinds = ineq.build()
    return MixedConstraintSystem(
        layout=layout,
        c=np.array([1.0]),
        A=A,
        b0=b0,
        B=B,
        C=C,
        d0=d0,
        D=D,
        model=0,
        y_true=0,
        y_target=-1,
        eq_kinds=eq_kinds,
        ineq_kinds=ineq_kinds,
    )


@pytest.fixture
def toy_system():
    """Factory for one-variable systems; the default is min y s.t. y >= beta_1, y >= 1 - beta_1."""

    def _factory(rows=((0.0, [-1.0, 0.0]), (-1.0, [1.0, 0.0])), y_hi: float = 2.0) -> MixedConstraintSystem:
        return _toy_system(rows, y_hi)

    return _factory
