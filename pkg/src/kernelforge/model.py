"""The general kernel model: prediction, multi-class decision, metrics, persistence.

A model is ``f(x) = sum_j alpha_j K(x, z_j)`` with centers ``Z`` chosen
independently of any training set.  Multi-class models keep one weight
column per class and decide by row-wise argmax.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .kernels import Dataset, KernelSpec, kernel_apply
from .validation import as_float_matrix, as_weight_matrix, check_same_features

MODEL_MAGIC = "kernelforge-model"
MODEL_VERSION = 1


@dataclass
class GeneralKernelModel:
    spec: KernelSpec
    centers: np.ndarray   # (p, d)
    weights: np.ndarray   # (p, c)

    def __post_init__(self):
        self.centers = as_float_matrix(self.centers, "centers")
        self.weights = as_weight_matrix(self.weights, "weights")
        if self.centers.shape[0] < 1:
            raise ValueError("model must have at least one center")
        if self.centers.shape[0] != self.weights.shape[0]:
            raise ValueError(
                f"{self.centers.shape[0]} centers but {self.weights.shape[0]} weight rows"
            )

    @property
    def p(self) -> int:
        return self.centers.shape[0]

    @property
    def c(self) -> int:
        return self.weights.shape[1]


def predict(model: GeneralKernelModel, X) -> np.ndarray:
    """Evaluate ``K(X, Z) @ weights``, shape (n, c)."""
    X = as_float_matrix(X, "X")
    check_same_features(X, model.centers, "X", "centers")
    return kernel_apply(model.spec, X, model.centers, model.weights)


def classify(model: GeneralKernelModel, X) -> np.ndarray:
    """Row-wise argmax of the predictions; ties go to the lowest class index."""
    if model.c < 2:
        raise ValueError("classify requires a model with at least 2 output columns")
    return np.argmax(predict(model, X), axis=1)


def one_hot_labels(targets: np.ndarray):
    """Return the label vector if ``targets`` rows are one-hot over {0,1}, else None."""
    t = np.asarray(targets)
    if t.ndim != 2 or t.shape[1] < 2:
        return None
    if not np.all((t == 0.0) | (t == 1.0)):
        return None
    if not np.all(t.sum(axis=1) == 1.0):
        return None
    return np.argmax(t, axis=1)


def evaluate(model: GeneralKernelModel, dataset: Dataset) -> dict:
    """Mean squared error, plus accuracy when the targets are one-hot."""
    preds = predict(model, dataset.features)
    if preds.shape != dataset.targets.shape:
        raise ValueError(
            f"model emits {preds.shape[1]} outputs but targets have {dataset.targets.shape[1]}"
        )
    diff = preds - dataset.targets
    out = {"mse": float(np.sum(diff * diff) / dataset.n), "accuracy": None}
    labels = one_hot_labels(dataset.targets)
    if labels is not None:
        out["accuracy"] = float(np.mean(np.argmax(preds, axis=1) == labels))
    return out


def save_model(model: GeneralKernelModel, path) -> None:
    """Write a model file: one JSON header line, then raw little-endian f64 Z and alpha."""
    header = {
        "format": MODEL_MAGIC,
        "version": MODEL_VERSION,
        "kernel": model.spec.family,
        "bandwidth": model.spec.bandwidth,
        "p": model.p,
        "d": model.centers.shape[1],
        "c": model.c,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(model.centers, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path) -> GeneralKernelModel:
    """Read a model file written by :func:`save_model`; round trips byte-exactly."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: not a model file (bad header)") from exc
        if header.get("format") != MODEL_MAGIC:
            raise ValueError(f"{path}: unrecognized format {header.get('format')!r}")
        if header.get("version") != MODEL_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')!r}")
        p, d, c = header["p"], header["d"], header["c"]
        payload = fh.read()
    expected = (p * d + p * c) * 8
    if len(payload) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    centers = np.frombuffer(payload[: p * d * 8], dtype="<f8").reshape(p, d)
    weights = np.frombuffer(payload[p * d * 8 :], dtype="<f8").reshape(p, c)
    spec = KernelSpec(family=header["kernel"], bandwidth=header["bandwidth"])
    return GeneralKernelModel(spec=spec, centers=centers.copy(), weights=weights.copy())
