import numpy as np
import pytest

from kernelforge.kernels import Dataset, KernelSpec, eval_kernel, kernel_matrix
from kernelforge.model import (
    GeneralKernelModel,
    classify,
    evaluate,
    load_model,
    one_hot_labels,
    predict,
    save_model,
)

SPEC = KernelSpec("laplace", 1.5)


def random_model(p=4, d=3, c=2, seed=0):
    rng = np.random.default_rng(seed)
    return GeneralKernelModel(
        spec=SPEC,
        centers=rng.standard_normal((p, d)),
        weights=rng.standard_normal((p, c)),
    )


class TestPredict:
    def test_zero_weights(self):
        m = random_model()
        m.weights = np.zeros_like(m.weights)
        X = np.random.default_rng(1).standard_normal((5, 3))
        np.testing.assert_array_equal(predict(m, X), np.zeros((5, 2)))

    def test_single_center_is_kernel_value(self):
        z = np.array([[0.3, -0.2]])
        m = GeneralKernelModel(spec=SPEC, centers=z, weights=np.array([[1.0]]))
        x = np.array([1.0, 2.0])
        assert predict(m, x[None, :])[0, 0] == eval_kernel(SPEC, x, z[0])

    def test_matches_naive_loop(self):
        m = random_model(p=4, d=3, c=2, seed=2)
        X = np.random.default_rng(3).standard_normal((10, 3))
        ref = np.zeros((10, 2))
        for i, x in enumerate(X):
            for j, z in enumerate(m.centers):
                ref[i] += eval_kernel(SPEC, x, z) * m.weights[j]
        np.testing.assert_allclose(predict(m, X), ref, atol=1e-12)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="feature"):
            predict(random_model(d=3), np.zeros((2, 4)))


class TestClassify:
    def test_argmax_row(self):
        m = random_model(p=1, d=1, c=2, seed=4)
        m.weights = np.array([[0.1, 0.9]])
        assert classify(m, np.array([[0.0]]))[0] == 1

    def test_tie_goes_to_lowest_index(self):
        m = random_model(p=1, d=1, c=2, seed=5)
        m.weights = np.array([[0.5, 0.5]])
        assert classify(m, np.array([[0.0]]))[0] == 0

    def test_matches_loop_oracle(self):
        m = random_model(p=6, d=2, c=4, seed=6)
        X = np.random.default_rng(7).standard_normal((20, 2))
        preds = predict(m, X)
        ref = np.array([int(np.argmax(row)) for row in preds])
        np.testing.assert_array_equal(classify(m, X), ref)

    def test_rejects_single_output(self):
        with pytest.raises(ValueError, match="2 output"):
            classify(random_model(c=1), np.zeros((1, 3)))


class TestEvaluate:
    def test_perfect_interpolant(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((12, 2))
        targets = np.zeros((12, 2))
        targets[np.arange(12), np.arange(12) % 2] = 1.0
        K = kernel_matrix(SPEC, X, X)
        alpha = np.linalg.solve(K, targets)
        m = GeneralKernelModel(spec=SPEC, centers=X, weights=alpha)
        scores = evaluate(m, Dataset(features=X, targets=targets))
        assert scores["mse"] == pytest.approx(0.0, abs=1e-16)
        assert scores["accuracy"] == 1.0

    def test_zero_model_accuracy_is_class0_frequency(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((10, 2))
        labels = rng.integers(0, 3, size=10)
        targets = np.zeros((10, 3))
        targets[np.arange(10), labels] = 1.0
        m = GeneralKernelModel(spec=SPEC, centers=X[:2], weights=np.zeros((2, 3)))
        scores = evaluate(m, Dataset(features=X, targets=targets))
        assert scores["accuracy"] == pytest.approx(np.mean(labels == 0))

    def test_mse_matches_hand_computation(self):
        m = random_model(p=3, d=2, c=2, seed=10)
        rng = np.random.default_rng(11)
        X = rng.standard_normal((7, 2))
        y = rng.standard_normal((7, 2))
        scores = evaluate(m, Dataset(features=X, targets=y))
        ref = np.sum((predict(m, X) - y) ** 2) / 7
        assert scores["mse"] == pytest.approx(ref, rel=1e-12)
        assert scores["accuracy"] is None  # targets are not one-hot


class TestOneHotLabels:
    def test_detects_one_hot(self):
        t = np.array([[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_array_equal(one_hot_labels(t), [0, 1])

    @pytest.mark.parametrize("t", [
        np.array([[0.5, 0.5]]),
        np.array([[1.0, 1.0]]),
        np.array([[1.0], [0.0]]),
    ])
    def test_rejects_non_one_hot(self, t):
        assert one_hot_labels(t) is None


class TestPersistence:
    def test_round_trip_bytes(self, tmp_path):
        m = random_model(p=5, d=3, c=2, seed=12)
        path1 = tmp_path / "a.gkm"
        path2 = tmp_path / "b.gkm"
        save_model(m, path1)
        save_model(load_model(path1), path2)
        assert path1.read_bytes() == path2.read_bytes()

    def test_round_trip_predictions_bitwise(self, tmp_path):
        m = random_model(p=5, d=3, c=2, seed=13)
        path = tmp_path / "m.gkm"
        save_model(m, path)
        loaded = load_model(path)
        X = np.random.default_rng(14).standard_normal((8, 3))
        np.testing.assert_array_equal(predict(m, X), predict(loaded, X))
        assert loaded.spec == m.spec

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.gkm"
        path.write_bytes(b"\x00\x01\x02 not a model\n")
        with pytest.raises(ValueError):
            load_model(path)

    def test_rejects_truncated_payload(self, tmp_path):
        m = random_model(seed=15)
        path = tmp_path / "t.gkm"
        save_model(m, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(ValueError, match="payload"):
            load_model(path)
