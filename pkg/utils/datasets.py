"""Fixture datasets: seeded two-moons and numeric CSV files whose last column is the label."""
import csv
import logging
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from core.errors import DatasetError
from core.network import Sample

logger = logging.getLogger(__name__)

MOONS_NOISE = 0.1


def two_moons(n: int, seed: int, noise: float = MOONS_NOISE) -> Tuple[np.ndarray, np.ndarray]:
    """Two interleaving half circles, the first n // 2 points labelled 0 and the rest 1."""
    if n < 2:
        raise DatasetError(f"two-moons needs at least 2 points, got {n}")
    n_out = n // 2
    n_in = n - n_out
    t_out = np.linspace(0.0, np.pi, n_out)
    t_in = np.linspace(0.0, np.pi, n_in)
    outer = np.stack([np.cos(t_out), np.sin(t_out)], axis=1)
    inner = np.stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)], axis=1)
    X = np.vstack([outer, inner])
    y = np.concatenate([np.zeros(n_out, dtype=int), np.ones(n_in, dtype=int)])
    rng = np.random.default_rng(seed)
    X = X + noise * rng.standard_normal(X.shape)
    return X, y


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(
    path: str,
    classes: Optional[Sequence[int]] = None,
    balanced: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Reads features and labels; a non-numeric first row is taken as a header.

    Labels may be integers or names, names are numbered in order of first appearance. `classes` keeps a subset
    (relabelled 0..k-1 in the given order), `balanced` then takes that many rows alternating between classes.
    """
    features: List[List[float]] = []
    raw_labels: List[str] = []
    width = None
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            cells = [c.strip() for c in row]
            if not cells or all(c == "" for c in cells):
                continue
            if lineno == 1 and not all(_is_number(c) for c in cells[:-1]):
                continue
            if len(cells) < 2:
                raise DatasetError(f"line {lineno}: expected features and a label", payload={"line": lineno})
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DatasetError(
                    f"line {lineno}: expected {width} columns, got {len(cells)}", payload={"line": lineno}
                )
            try:
                features.append([float(c) for c in cells[:-1]])
            except ValueError:
                bad = next(c for c in cells[:-1] if not _is_number(c))
                raise DatasetError(f"line {lineno}: non-numeric cell {bad!r}", payload={"line": lineno})
            raw_labels.append(cells[-1])

    if not features:
        raise DatasetError(f"{path} holds no data rows")

    names: Dict[str, int] = {}
    if all(_is_number(lab) for lab in raw_labels):
        labels = np.array([int(float(lab)) for lab in raw_labels])
    else:
        labels = np.array([names.setdefault(lab, len(names)) for lab in raw_labels])
    X = np.array(features, dtype=float)

    if classes is not None:
        keep = np.isin(labels, classes)
        remap = {c: i for i, c in enumerate(classes)}
        X = X[keep]
        labels = np.array([remap[lab] for lab in labels[keep]], dtype=int)
        if not len(labels):
            raise DatasetError(f"no rows left for classes {list(classes)}")

    if balanced is not None:
        X, labels = _balanced(X, labels, balanced)

    logger.info(f"loaded {len(labels)} rows with {X.shape[1]} features from {path}")
    return X, labels


def _balanced(X: np.ndarray, labels: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    pools = [list(np.flatnonzero(labels == c)) for c in np.unique(labels)]
    picked = []
    while len(picked) < n and any(pools):
        for pool in pools:
            if pool and len(picked) < n:
                picked.append(pool.pop(0))
    if len(picked) < n:
        raise DatasetError(f"asked for {n} balanced rows, only {len(picked)} available")
    idx = np.array(picked)
    return X[idx], labels[idx]


def gen_dataset(
    kind: str,
    n: Optional[int] = None,
    seed: int = 0,
    path: Optional[str] = None,
    classes: Optional[Sequence[int]] = None,
    balanced: Optional[int] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    if kind == "two-moons":
        if n is None:
            raise DatasetError("two-moons needs a sample count")
        return two_moons(n, seed)
    if kind == "csv":
        if path is None:
            raise DatasetError("csv datasets need a path")
        return load_csv(path, classes=classes, balanced=balanced)
    raise DatasetError(f"unknown dataset kind {kind!r}")


def to_samples(X: np.ndarray, y: np.ndarray) -> List[Sample]:
    return [Sample(x0=np.asarray(x, dtype=float), label=int(label)) for x, label in zip(X, y)]


def dump_dataset(X: np.ndarray, y: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([f"x{i}" for i in range(X.shape[1])] + ["label"])
        for x, label in zip(X, y):
            writer.writerow([repr(float(v)) for v in x] + [int(label)])
