import json
import logging
from typing import Any
from typing import Dict
from typing import Optional

import numpy as np

from core.errors import ShapeMismatchError
from core.network import Network
from core.network import PruneMask

logger = logging.getLogger(__name__)


def _default(o: Any) -> Any:
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def dumps(doc: Dict[str, Any]) -> str:
    return json.dumps(doc, indent=2, default=_default)


def write_report(doc: Dict[str, Any], path: Optional[str]) -> str:
    """Writes the report to `path` (stdout when None) and returns the serialized document."""
    raw = dumps(doc)
    if path is None:
        print(raw)
    else:
        with open(path, "w") as f:
            f.write(raw + "\n")
        logger.info(f"report written to {path}")
    return raw


def mask_to_dict(mask: PruneMask) -> Dict[str, Any]:
    return {"masks": [m.astype(int).tolist() for m in mask.masks]}


def mask_from_dict(data: Dict[str, Any], net: Network) -> PruneMask:
    try:
        masks = tuple(np.array(m, dtype=float, ndmin=2) for m in data["masks"])
    except KeyError:
        raise ShapeMismatchError("mask document is missing field 'masks'")
    if len(masks) != net.depth:
        raise ShapeMismatchError(f"mask has {len(masks)} layers, network has {net.depth}")
    return PruneMask(masks=masks)


def load_mask(path: str, net: Network) -> PruneMask:
    with open(path) as f:
        return mask_from_dict(json.load(f), net)
