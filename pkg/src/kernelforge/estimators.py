"""Scikit-learn compatible estimators wrapping the training loops.

These follow the usual conventions (``fit``/``predict``, ``get_params``,
``n_features_in_``, trailing-underscore fitted attributes) so general kernel
models drop into pipelines, grid search, and cross-validation.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.exceptions import NotFittedError

from .data_io import KMEANS, RANDOM_SUBSET, CenterSelection, select_centers
from .ep2 import PAPER_RULE
from .kernels import Dataset, KernelSpec
from .model import classify as model_classify
from .model import predict as model_predict
from .trainer import (
    EP3,
    TRAIN_VARIANTS,
    Ep2Projection,
    ExactProjection,
    RichardsonProjection,
    TrainConfig,
    train,
)
from .validation import as_float_matrix

_PROJECTIONS = ("ep2", "exact", "richardson")


class _KernelModelBase(BaseEstimator):
    def __init__(
        self,
        kernel="laplace",
        bandwidth=1.0,
        n_centers=100,
        center_method=RANDOM_SUBSET,
        variant=EP3,
        q=0,
        s=None,
        batch_size=None,
        eta="auto",
        epochs=10,
        projection="ep2",
        projection_epochs=1,
        lr_rule=PAPER_RULE,
        ridge=0.0,
        tol=0.0,
        random_state=0,
    ):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.n_centers = n_centers
        self.center_method = center_method
        self.variant = variant
        self.q = q
        self.s = s
        self.batch_size = batch_size
        self.eta = eta
        self.epochs = epochs
        self.projection = projection
        self.projection_epochs = projection_epochs
        self.lr_rule = lr_rule
        self.ridge = ridge
        self.tol = tol
        self.random_state = random_state

    def _build_projection(self):
        if self.projection == "exact":
            return ExactProjection()
        if self.projection == "ep2":
            return Ep2Projection(epochs=self.projection_epochs, lr_rule=self.lr_rule)
        if self.projection == "richardson":
            return RichardsonProjection(steps=self.projection_epochs)
        raise ValueError(
            f"unknown projection {self.projection!r}; expected one of {_PROJECTIONS}"
        )

    def _fit_weights(self, X, targets):
        X = as_float_matrix(X, "X")
        if self.variant not in TRAIN_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        n = X.shape[0]
        p = min(self.n_centers, n)
        selection = CenterSelection(
            method=self.center_method, p=p, seed=self.random_state
        )
        centers, _ = select_centers(X, selection)
        if self.center_method == KMEANS:
            # Lloyd centroids can coincide on degenerate data; keep distinct rows.
            centers = np.unique(centers, axis=0)
        spec = KernelSpec(family=self.kernel, bandwidth=self.bandwidth)
        s = self.s
        if s is None:
            s = min(n, max(self.q + 1, min(1024, n)))
        config = TrainConfig(
            q_data=self.q,
            s=s,
            m=self.batch_size,
            eta=self.eta,
            epochs=self.epochs,
            projection=self._build_projection(),
            seed=self.random_state,
            tol=self.tol,
            ridge=self.ridge,
        )
        dataset = Dataset(features=X, targets=targets)
        model, history = train(spec, dataset, centers, config, variant=self.variant)
        self.model_ = model
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"this {type(self).__name__} instance is not fitted yet; call fit first"
            )


class GeneralKernelRegressor(_KernelModelBase, RegressorMixin):
    """Kernel regression with centers decoupled from the training set.

    Parameters mirror :class:`kernelforge.trainer.TrainConfig`; see the
    trainer module for the underlying loops.  ``score`` is the usual R^2.

    Examples
    --------
    >>> import numpy as np
    >>> from kernelforge.estimators import GeneralKernelRegressor
    >>> rng = np.random.default_rng(0)
    >>> X = rng.uniform(-1, 1, (200, 2))
    >>> y = np.sin(3 * X[:, 0]) * np.cos(2 * X[:, 1])
    >>> reg = GeneralKernelRegressor(n_centers=50, epochs=20, random_state=0).fit(X, y)
    >>> reg.predict(X[:3]).shape
    (3,)
    """

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float64)
        self._y_was_1d_ = y.ndim == 1
        targets = y[:, None] if y.ndim == 1 else y
        return self._fit_weights(X, targets)

    def predict(self, X):
        self._check_fitted()
        preds = model_predict(self.model_, X)
        return preds[:, 0] if self._y_was_1d_ else preds


class GeneralKernelClassifier(_KernelModelBase, ClassifierMixin):
    """One-vs-all kernel classification: c independent {0,1} regressions.

    The decision rule picks the class with the largest predicted value
    (ties to the lowest class index).  ``score`` is accuracy.
    """

    def fit(self, X, y):
        y = np.asarray(y)
        if y.ndim != 1:
            raise ValueError("classifier targets must be a 1-D label vector")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ValueError("need at least 2 classes")
        targets = np.zeros((y.shape[0], self.classes_.shape[0]))
        targets[np.arange(y.shape[0]), encoded] = 1.0
        return self._fit_weights(X, targets)

    def decision_function(self, X):
        self._check_fitted()
        return model_predict(self.model_, X)

    def predict(self, X):
        self._check_fitted()
        return self.classes_[model_classify(self.model_, X)]
