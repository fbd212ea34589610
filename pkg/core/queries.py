"""Turns a (network, bounds, true class, target class) query into the constraint system of the chosen model."""
from enum import Enum
from enum import unique
from typing import List
from typing import Optional

from core.errors import EncodingError
from core.errors import UnsupportedActivationError
from core.intervals import IntervalBounds
from core.network import Network
from core.pwl import build_model1
from core.stepbound import build_model2
from core.system import MixedConstraintSystem

MODELS = (1, 2)


@unique
class SolverKind(Enum):
    ENUMERATE = "enumerate"
    BNB = "bnb"
    BENDERS = "benders"
    QUBO_SA = "qubo-sa"
    QUBO_EXACT = "qubo-exact"

    @property
    def certifies(self) -> bool:
        """QUBO solvers work on a discretized problem, their optimum only ever yields candidate inputs."""
        return self not in (SolverKind.QUBO_SA, SolverKind.QUBO_EXACT)


def check_model(net: Network, model: int) -> None:
    if model not in MODELS:
        raise EncodingError(f"model must be one of {MODELS}, got {model}")
    for layer in net.layers:
        if model == 1 and not layer.activation.is_piecewise_linear:
            raise UnsupportedActivationError(
                f"model 1 needs piecewise-linear activations, got {layer.activation.value}, use model 2",
                payload={"model": model, "activation": layer.activation.value},
            )


def target_classes(net: Network, label: int) -> List[int]:
    return [k for k in range(net.output_dim) if k != label]


def build_query(
    net: Network,
    bounds: IntervalBounds,
    label: int,
    target: Optional[int],
    model: int,
    segments: int,
    one_sided: bool = False,
) -> MixedConstraintSystem:
    """The system minimizing logit[label] - logit[target] over the input box of `bounds`."""
    check_model(net, model)
    if model == 1:
        return build_model1(net, None, None, None, bounds, label, target)
    return build_model2(net, None, None, None, bounds, label, target, n_segments=segments, one_sided=one_sided)
