"""Dataset ingestion, synthetic generation, and center selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .kernels import Dataset
from .validation import as_float_matrix

RANDOM_SUBSET = "random"
KMEANS = "kmeans"

_METHODS = (RANDOM_SUBSET, KMEANS)


@dataclass(frozen=True)
class CenterSelection:
    method: str
    p: int
    seed: int = 0
    iters: int = 20   # Lloyd iterations, k-means only

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {_METHODS}")
        if self.p < 1:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if self.method == KMEANS and self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")


def load_csv(path, label_columns: int = 1, header: bool = False) -> Dataset:
    """Read a numeric CSV: all but the last ``label_columns`` columns are features."""
    if label_columns < 1:
        raise ValueError(f"label_columns must be >= 1, got {label_columns}")
    rows = []
    width = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, cells in enumerate(reader, start=1):
            if not cells:
                continue
            if header and lineno == 1:
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"{path}: row {lineno} has {len(cells)} cells, expected {width}"
                )
            parsed = []
            for col, cell in enumerate(cells, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise ValueError(
                        f"{path}: non-numeric cell at row {lineno}, column {col}: {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    if width <= label_columns:
        raise ValueError(
            f"{path}: {width} columns cannot supply {label_columns} label columns"
        )
    data = np.array(rows, dtype=np.float64)
    return Dataset(features=data[:, :-label_columns], targets=data[:, -label_columns:])


def save_csv(dataset: Dataset, path) -> None:
    """Write features then target columns; values round-trip float64 exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for xrow, yrow in zip(dataset.features, dataset.targets):
            writer.writerow([repr(float(v)) for v in xrow] + [repr(float(v)) for v in yrow])


def make_blobs(n: int, d: int, classes: int, spread: float = 1.0, seed: int = 0) -> Dataset:
    """Gaussian blobs with one-hot targets, class counts balanced within one."""
    if n < 1 or d < 1 or classes < 1:
        raise ValueError("n, d and classes must all be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-10.0, 10.0, size=(classes, d))
    labels = np.arange(n) % classes
    rng.shuffle(labels)
    features = means[labels] + spread * rng.standard_normal((n, d))
    targets = np.zeros((n, max(classes, 1)))
    targets[np.arange(n), labels] = 1.0
    if classes == 1:
        targets = targets[:, :1]
    return Dataset(features=features, targets=targets)


def select_centers(X, sel: CenterSelection):
    """Pick model centers from ``X``.

    Random subsets return ``(centers, indices)``; k-means returns
    ``(centroids, None)``.
    """
    X = as_float_matrix(X, "X")
    n = X.shape[0]
    rng = np.random.default_rng(sel.seed)
    if sel.method == RANDOM_SUBSET:
        if sel.p > n:
            raise ValueError(f"cannot draw p={sel.p} distinct rows from n={n}")
        ids = np.sort(rng.choice(n, size=sel.p, replace=False))
        return X[ids].copy(), ids
    centers, _ = kmeans_centers(X, sel.p, sel.iters, rng)
    return centers, None


def _kmeans_pp_init(X: np.ndarray, k: int, rng) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    sq = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = sq.sum()
        if total <= 0:
            centers[j] = X[rng.integers(n)]
            continue
        centers[j] = X[rng.choice(n, p=sq / total)]
        sq = np.minimum(sq, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def kmeans_centers(X, k: int, iters: int, rng):
    """Lloyd's algorithm with distance-squared seeding.

    An empty cluster is re-seeded at the point farthest from its assigned
    centroid.  Returns ``(centroids, wcss_history)`` where the history is
    the within-cluster sum of squares after each iteration; it never
    increases.
    """
    X = as_float_matrix(X, "X")
    n = X.shape[0]
    if k > n:
        raise ValueError(f"cannot form k={k} clusters from n={n} points")
    centers = _kmeans_pp_init(X, k, rng)
    history = []
    for _ in range(iters):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        assign = np.argmin(d2, axis=1)
        nearest = d2[np.arange(n), assign]
        for j in range(k):
            if not np.any(assign == j):
                far = int(np.argmax(nearest))
                centers[j] = X[far]
                assign[far] = j
                d2[:, j] = ((X - centers[j]) ** 2).sum(axis=-1)
                nearest = d2[np.arange(n), np.argmin(d2, axis=1)]
        for j in range(k):
            members = assign == j
            if np.any(members):
                centers[j] = X[members].mean(axis=0)
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        history.append(float(d2.min(axis=1).sum()))
    return centers, history
