"""Feedforward networks: evaluation, margins, norms and pruning masks."""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from enum import unique
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from core.errors import DimensionError
from core.errors import MarginUndefinedError
from core.errors import ShapeMismatchError

logger = logging.getLogger(__name__)


@unique
class ActivationKind(Enum):
    """Every kind is non-decreasing, which the step-bound tables rely on."""

    RELU = "relu"
    HARDTANH = "hardtanh"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    IDENTITY = "identity"

    @property
    def is_piecewise_linear(self) -> bool:
        return self in (ActivationKind.RELU, ActivationKind.HARDTANH, ActivationKind.IDENTITY)

    @property
    def lipschitz(self) -> float:
        if self is ActivationKind.SIGMOID:
            return 0.25
        return 1.0

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self is ActivationKind.RELU:
            return np.maximum(z, 0.0)
        if self is ActivationKind.HARDTANH:
            return np.clip(z, -1.0, 1.0)
        if self is ActivationKind.SIGMOID:
            return 1.0 / (1.0 + np.exp(-z))
        if self is ActivationKind.TANH:
            return np.tanh(z)
        return np.asarray(z, dtype=float)


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: ActivationKind

    @property
    def rows(self) -> int:
        return self.weights.shape[0]

    @property
    def cols(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class Network:
    layers: Tuple[Layer, ...]
    input_dim: int

    def __post_init__(self) -> None:
        if self.input_dim <= 0:
            raise DimensionError(f"input_dim must be positive, got {self.input_dim}")
        if not self.layers:
            raise DimensionError("a network needs at least one layer")
        prev = self.input_dim
        for idx, layer in enumerate(self.layers, start=1):
            if layer.weights.ndim != 2 or layer.cols != prev:
                raise DimensionError(
                    f"layer {idx} weights have shape {layer.weights.shape}, expected (*, {prev})",
                    payload={"layer": idx},
                )
            if layer.bias.shape != (layer.rows,):
                raise DimensionError(
                    f"layer {idx} bias has shape {layer.bias.shape}, expected ({layer.rows},)",
                    payload={"layer": idx},
                )
            prev = layer.rows
        hidden = {layer.activation for layer in self.layers[:-1]}
        if len(hidden) > 1:
            raise DimensionError(f"hidden layers must share one activation, got {sorted(h.value for h in hidden)}")
        last = self.layers[-1].activation
        if hidden and last not in hidden and last is not ActivationKind.IDENTITY:
            raise DimensionError(f"final layer must be identity or {next(iter(hidden)).value}, got {last.value}")

    @classmethod
    def from_arrays(
        cls,
        weights: Sequence[Any],
        biases: Sequence[Any],
        activation: ActivationKind,
    ) -> "Network":
        """Builds a network whose hidden layers use `activation` and whose final layer outputs logits."""
        if len(weights) != len(biases):
            raise DimensionError(f"got {len(weights)} weight matrices but {len(biases)} bias vectors")
        layers = []
        for idx, (w, b) in enumerate(zip(weights, biases)):
            act = ActivationKind.IDENTITY if idx == len(weights) - 1 else activation
            layers.append(
                Layer(
                    weights=np.array(w, dtype=float, ndmin=2),
                    bias=np.array(b, dtype=float).reshape(-1),
                    activation=act,
                )
            )
        return cls(layers=tuple(layers), input_dim=layers[0].cols)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def widths(self) -> List[int]:
        """[n_0, n_1, ..., n_L]."""
        return [self.input_dim] + [layer.rows for layer in self.layers]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].rows

    @property
    def hidden_activation(self) -> ActivationKind:
        return self.layers[0].activation

    def with_weights(self, weights: Sequence[np.ndarray]) -> "Network":
        return Network(
            layers=tuple(
                Layer(weights=np.array(w, dtype=float), bias=layer.bias, activation=layer.activation)
                for layer, w in zip(self.layers, weights)
            ),
            input_dim=self.input_dim,
        )

    def suffix(self, cut: int) -> "Network":
        """The network made of layers cut+1..L, fed by layer `cut` activations."""
        layers = self.layers[cut:]
        return Network(layers=layers, input_dim=layers[0].cols)


@dataclass(frozen=True)
class PruneMask:
    masks: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        for idx, m in enumerate(self.masks, start=1):
            if not np.all((m == 0) | (m == 1)):
                raise ShapeMismatchError(f"mask {idx} has entries outside {{0, 1}}", payload={"layer": idx})

    @classmethod
    def ones(cls, net: Network) -> "PruneMask":
        return cls(masks=tuple(np.ones_like(layer.weights) for layer in net.layers))


@dataclass(frozen=True)
class Sample:
    x0: np.ndarray
    label: int

    def check(self, net: Network) -> None:
        if self.x0.shape != (net.input_dim,):
            raise DimensionError(f"sample has {self.x0.shape} features, layer 1 expects {net.input_dim}")
        if not 0 <= self.label < net.output_dim:
            raise DimensionError(f"label {self.label} outside [0, {net.output_dim})")


def trace(net: Network, x: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Returns (pre-activation, post-activation) per layer; `x` may be a vector or a (N, n_0) batch."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.input_dim:
        raise DimensionError(
            f"layer 1 expects {net.input_dim} inputs, got {h.shape[-1]}", payload={"layer": 1}
        )
    out = []
    for layer in net.layers:
        z = h @ layer.weights.T + layer.bias
        h = layer.activation.apply(z)
        out.append((z, h))
    return out


def forward_eval(net: Network, x: np.ndarray) -> np.ndarray:
    return trace(net, x)[-1][1]


def logit_margin(logits: np.ndarray, y: int) -> float:
    a = np.asarray(logits, dtype=float)
    if a.shape[-1] < 2:
        raise MarginUndefinedError("the logit margin needs at least two logits")
    return float(a[y] - np.max(np.delete(a, y)))


def batch_margins(logits: np.ndarray, y: int) -> np.ndarray:
    """Row-wise `logit_margin` for a (N, K) batch."""
    a = np.asarray(logits, dtype=float)
    if a.shape[-1] < 2:
        raise MarginUndefinedError("the logit margin needs at least two logits")
    return a[:, y] - np.max(np.delete(a, y, axis=1), axis=1)


def op_norm_inf(matrix: np.ndarray) -> float:
    """Induced infinity-norm, i.e. the max absolute row sum."""
    m = np.asarray(matrix, dtype=float)
    if m.size == 0:
        return 0.0
    return float(np.max(np.sum(np.abs(m), axis=1)))


def apply_mask(net: Network, mask: PruneMask) -> Tuple[Network, List[np.ndarray]]:
    """Returns the pruned network W' = W * M and the residuals dW = W * (1 - M). Biases are never pruned."""
    if len(mask.masks) != net.depth:
        raise ShapeMismatchError(f"mask has {len(mask.masks)} layers, network has {net.depth}")
    pruned = []
    residuals = []
    for idx, (layer, m) in enumerate(zip(net.layers, mask.masks), start=1):
        if m.shape != layer.weights.shape:
            raise ShapeMismatchError(
                f"mask {idx} has shape {m.shape}, weights have {layer.weights.shape}", payload={"layer": idx}
            )
        pruned.append(np.where(m == 1, layer.weights, 0.0))
        residuals.append(np.where(m == 1, 0.0, layer.weights))
    return net.with_weights(pruned), residuals


def magnitude_mask(net: Network, sparsity: float, layers: Optional[Sequence[int]] = None) -> PruneMask:
    """Unstructured magnitude pruning: zeroes the `sparsity` fraction of smallest |w| in each selected layer.

    `layers` are 1-based layer indices, all layers by default.
    """
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must be in [0, 1], got {sparsity}")
    selected = set(layers) if layers is not None else set(range(1, net.depth + 1))
    masks = []
    for idx, layer in enumerate(net.layers, start=1):
        m = np.ones_like(layer.weights)
        if idx in selected:
            k = int(np.floor(sparsity * layer.weights.size))
            if k > 0:
                order = np.argsort(np.abs(layer.weights), axis=None, kind="stable")[:k]
                m.flat[order] = 0.0
        masks.append(m)
    return PruneMask(masks=tuple(masks))


def removed_row_mass(residuals: Sequence[np.ndarray]) -> List[float]:
    return [op_norm_inf(dw) for dw in residuals]


def network_to_dict(net: Network) -> Dict[str, Any]:
    return {
        "input_dim": net.input_dim,
        "activation": net.hidden_activation.value,
        "layers": [
            {
                "rows": layer.rows,
                "cols": layer.cols,
                "weights": [float(v) for v in layer.weights.reshape(-1)],
                "bias": [float(v) for v in layer.bias],
            }
            for layer in net.layers
        ],
    }


def network_from_dict(data: Dict[str, Any]) -> Network:
    try:
        activation = ActivationKind(data["activation"])
        weights = []
        biases = []
        for raw in data["layers"]:
            w = np.array(raw["weights"], dtype=float)
            if w.size != raw["rows"] * raw["cols"]:
                raise DimensionError(f"layer declares {raw['rows']}x{raw['cols']} but has {w.size} weights")
            weights.append(w.reshape(raw["rows"], raw["cols"]))
            biases.append(np.array(raw["bias"], dtype=float))
    except KeyError as exc:
        raise DimensionError(f"network document is missing field {exc.args[0]!r}")
    except ValueError as exc:
        raise DimensionError(f"invalid network document: {exc}")
    net = Network.from_arrays(weights, biases, activation)
    if net.input_dim != data["input_dim"]:
        raise DimensionError(f"input_dim={data['input_dim']} does not match layer 1 ({net.input_dim} columns)")
    return net


def load_network(path: str) -> Network:
    with open(path) as f:
        net = network_from_dict(json.load(f))
    logger.info(f"loaded network {net.widths} ({net.hidden_activation.value}) from {path}")
    return net


def dump_network(net: Network, path: str) -> None:
    # json uses repr() for floats, which round-trips doubles (17 significant digits)
    with open(path, "w") as f:
        json.dump(network_to_dict(net), f, indent=2)
