"""Minimal full-batch Adam trainer for the fixture networks."""
import logging
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Sequence

import numpy as np

from core.errors import DatasetError
from core.errors import TrainingDivergedError
from core.network import ActivationKind
from core.network import Network
from core.network import forward_eval
from core.network import trace

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainResult:
    net: Network
    accuracy: float
    losses: List[float] = field(default_factory=list)


def parse_arch(arch: str) -> List[int]:
    try:
        widths = [int(w) for w in arch.split("-")]
    except ValueError:
        raise DatasetError(f"invalid architecture {arch!r}, expected something like 2-8-8-2")
    if len(widths) < 2 or min(widths) < 1:
        raise DatasetError(f"invalid architecture {arch!r}, expected something like 2-8-8-2")
    return widths


def init_network(widths: Sequence[int], activation: ActivationKind, seed: int) -> Network:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return Network.from_arrays(weights, biases, activation)


def _activation_grad(act: ActivationKind, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if act is ActivationKind.RELU:
        return (z > 0).astype(float)
    if act is ActivationKind.HARDTANH:
        return ((z > -1) & (z < 1)).astype(float)
    if act is ActivationKind.SIGMOID:
        return a * (1.0 - a)
    if act is ActivationKind.TANH:
        return 1.0 - a ** 2
    return np.ones_like(z)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-np.mean(log_probs[np.arange(len(y)), y]))


def accuracy(net: Network, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(forward_eval(net, X), axis=1) == y))


def _gradients(net: Network, X: np.ndarray, y: np.ndarray):
    steps = trace(net, X)
    logits = steps[-1][1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    delta = probs
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)

    grads_w, grads_b = [], []
    for l in range(net.depth - 1, -1, -1):
        layer = net.layers[l]
        z, a = steps[l]
        delta = delta * _activation_grad(layer.activation, z, a)
        prev = X if l == 0 else steps[l - 1][1]
        grads_w.append(delta.T @ prev)
        grads_b.append(delta.sum(axis=0))
        delta = delta @ layer.weights
    return grads_w[::-1], grads_b[::-1], cross_entropy(logits, y)


def train_fixture(
    X: np.ndarray,
    y: np.ndarray,
    arch: str,
    activation: ActivationKind = ActivationKind.RELU,
    epochs: int = 100,
    lr: float = 0.01,
    seed: int = 0,
) -> TrainResult:
    widths = parse_arch(arch)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.ndim != 2 or X.shape[1] != widths[0]:
        raise DatasetError(f"data has shape {X.shape}, architecture {arch} expects {widths[0]} features")
    if len(y) != len(X) or not len(y):
        raise DatasetError(f"got {len(X)} rows but {len(y)} labels")
    if y.min() < 0 or y.max() >= widths[-1]:
        raise DatasetError(f"labels must lie in [0, {widths[-1]}), got [{y.min()}, {y.max()}]")
    if epochs < 0:
        raise DatasetError(f"epochs must be >= 0, got {epochs}")

    net = init_network(widths, activation, seed)
    params = [p for layer in net.layers for p in (layer.weights.copy(), layer.bias.copy())]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    losses = []

    for t in range(1, epochs + 1):
        grads_w, grads_b, loss = _gradients(net, X, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss is {loss} at epoch {t}, try a smaller learning rate than {lr}", payload={"epoch": t, "lr": lr}
            )
        losses.append(loss)
        grads = [g for pair in zip(grads_w, grads_b) for g in pair]
        for i, g in enumerate(grads):
            m[i] = ADAM_BETA1 * m[i] + (1 - ADAM_BETA1) * g
            v[i] = ADAM_BETA2 * v[i] + (1 - ADAM_BETA2) * g ** 2
            m_hat = m[i] / (1 - ADAM_BETA1 ** t)
            v_hat = v[i] / (1 - ADAM_BETA2 ** t)
            params[i] = params[i] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        net = Network.from_arrays(params[0::2], params[1::2], activation)
        logger.debug(f"epoch {t}: loss={loss:.6f}")

    acc = accuracy(net, X, y)
    logger.info(f"trained {arch} ({activation.value}) for {epochs} epochs: accuracy={acc:.3f}")
    return TrainResult(net=net, accuracy=acc, losses=losses)
