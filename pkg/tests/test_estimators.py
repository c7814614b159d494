import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from kernelforge.data_io import make_blobs
from kernelforge.estimators import GeneralKernelClassifier, GeneralKernelRegressor
from kernelforge.kernels import KernelSpec, kernel_matrix


def teacher_regression(n=200, d=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, (n, d))
    y = np.sin(2.0 * X[:, 0]) + 0.5 * np.cos(3.0 * X[:, 1])
    return X, y


class TestRegressor:
    def test_fit_predict_reduces_error(self):
        X, y = teacher_regression()
        reg = GeneralKernelRegressor(
            bandwidth=1.0, n_centers=60, epochs=30, q=4, s=100, random_state=0
        )
        reg.fit(X, y)
        preds = reg.predict(X)
        assert preds.shape == (200,)
        mse = np.mean((preds - y) ** 2)
        assert mse < 0.25 * np.var(y)

    def test_score_is_r2(self):
        X, y = teacher_regression(seed=1)
        reg = GeneralKernelRegressor(n_centers=80, epochs=40, q=4, random_state=1)
        assert reg.fit(X, y).score(X, y) > 0.5

    def test_2d_targets_preserved(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, (50, 2))
        Y = rng.standard_normal((50, 3))
        reg = GeneralKernelRegressor(n_centers=20, epochs=5, random_state=2).fit(X, Y)
        assert reg.predict(X).shape == (50, 3)

    def test_get_set_params_round_trip(self):
        reg = GeneralKernelRegressor(bandwidth=2.5, q=7)
        params = reg.get_params()
        assert params["bandwidth"] == 2.5 and params["q"] == 7
        reg.set_params(bandwidth=1.25)
        assert reg.bandwidth == 1.25

    def test_clone_preserves_params(self):
        reg = GeneralKernelRegressor(n_centers=33, epochs=3, variant="ep3-exact")
        cloned = clone(reg)
        assert cloned.get_params() == reg.get_params()

    def test_not_fitted_error(self):
        with pytest.raises(NotFittedError):
            GeneralKernelRegressor().predict(np.zeros((2, 2)))

    def test_exact_variant_matches_library_path(self):
        X, y = teacher_regression(n=80, seed=3)
        reg = GeneralKernelRegressor(
            variant="ep3-exact", n_centers=80, center_method="random",
            epochs=50, q=0, eta="auto", random_state=3,
        ).fit(X, y)
        # p = n and random subset of full size keeps the training rows as centers
        np.testing.assert_array_equal(reg.model_.centers, X)

    def test_history_exposed(self):
        X, y = teacher_regression(n=60, seed=4)
        reg = GeneralKernelRegressor(n_centers=20, epochs=4, random_state=4).fit(X, y)
        assert len(reg.history_) == 4
        assert reg.n_features_in_ == 2


class TestClassifier:
    def test_blobs_above_chance(self):
        ds = make_blobs(n=300, d=2, classes=3, spread=1.0, seed=5)
        labels = np.argmax(ds.targets, axis=1)
        clf = GeneralKernelClassifier(
            bandwidth=2.0, n_centers=40, epochs=20, q=2, random_state=5
        ).fit(ds.features, labels)
        acc = clf.score(ds.features, labels)
        assert acc > 0.9

    def test_classes_preserved(self):
        ds = make_blobs(n=90, d=2, classes=3, seed=6)
        labels = np.array(["ant", "bee", "cat"])[np.argmax(ds.targets, axis=1)]
        clf = GeneralKernelClassifier(n_centers=30, epochs=10, random_state=6)
        clf.fit(ds.features, labels)
        preds = clf.predict(ds.features)
        assert set(preds) <= {"ant", "bee", "cat"}
        np.testing.assert_array_equal(clf.classes_, ["ant", "bee", "cat"])

    def test_decision_function_shape(self):
        ds = make_blobs(n=60, d=2, classes=4, seed=7)
        labels = np.argmax(ds.targets, axis=1)
        clf = GeneralKernelClassifier(n_centers=20, epochs=5, random_state=7)
        clf.fit(ds.features, labels)
        assert clf.decision_function(ds.features).shape == (60, 4)

    def test_rejects_single_class(self):
        with pytest.raises(ValueError, match="2 classes"):
            GeneralKernelClassifier().fit(np.zeros((5, 2)), np.zeros(5))

    def test_rejects_2d_targets(self):
        with pytest.raises(ValueError, match="1-D"):
            GeneralKernelClassifier().fit(np.zeros((4, 2)), np.zeros((4, 2)))

    def test_kmeans_centers_supported(self):
        ds = make_blobs(n=200, d=2, classes=2, spread=0.8, seed=8)
        labels = np.argmax(ds.targets, axis=1)
        clf = GeneralKernelClassifier(
            center_method="kmeans", n_centers=8, epochs=15, random_state=8
        ).fit(ds.features, labels)
        assert clf.score(ds.features, labels) > 0.9
