import numpy as np
import pytest

from kernelforge.ep2 import (
    CORRECTED_RULE,
    PAPER_RULE,
    correction_weights,
    critical_batch_size,
    ep2_iteration,
    ep2_setup,
    ep2_solve,
    learning_rate,
)
from kernelforge.kernels import KernelSpec, kernel_matrix
from kernelforge.preconditioner import EXACT_Q, NystromPreconditioner, apply_I_minus_Q
from kernelforge.spectral import TopQEigensystem, top_q_eigensystem

SPEC = KernelSpec("laplace", 1.0)


def separated_centers(p, d=3, scale=6.0, seed=0):
    return scale * np.random.default_rng(seed).random((p, d))


class TestSetupRules:
    def test_correction_weights_closed_form(self):
        eig = TopQEigensystem(np.array([4.0]), np.eye(2)[:, :1], 2.0, 2)
        np.testing.assert_allclose(correction_weights(eig, 2), [1.0 / 16.0])

    def test_critical_batch_size_uncapped(self):
        assert critical_batch_size(1.0, 0.05, 50) == 20

    def test_critical_batch_size_capped(self):
        assert critical_batch_size(1.0, 0.01, 50) == 50

    def test_learning_rate_second_case(self):
        # m equals the critical value, so the saturated formula applies
        eta = learning_rate(1.0, 0.05, 20)
        assert eta == pytest.approx(0.99 * 20 / (1 + 19 * 0.05))
        assert eta == pytest.approx(10.1538, abs=1e-4)

    def test_learning_rate_first_case_both_rules(self):
        assert learning_rate(1.0, 0.01, 50, PAPER_RULE) == pytest.approx(1.0 / 100.0)
        assert learning_rate(1.0, 0.01, 50, CORRECTED_RULE) == pytest.approx(25.0)

    def test_rules_coincide_when_uncapped(self):
        m = critical_batch_size(1.0, 0.05, None)
        assert learning_rate(1.0, 0.05, m, PAPER_RULE) == learning_rate(
            1.0, 0.05, m, CORRECTED_RULE
        )

    def test_setup_validates_sizes(self):
        Z = separated_centers(10)
        with pytest.raises(ValueError, match="q"):
            ep2_setup(SPEC, Z, s=4, q=4)
        with pytest.raises(ValueError, match="exceeds"):
            ep2_setup(SPEC, Z, s=11, q=2)

    def test_subsample_deterministic(self):
        Z = separated_centers(30)
        a = ep2_setup(SPEC, Z, s=10, q=2, seed=7)
        b = ep2_setup(SPEC, Z, s=10, q=2, seed=7)
        np.testing.assert_array_equal(a.nystrom_indices, b.nystrom_indices)
        assert a.batch_size == b.batch_size and a.eta == b.eta


class TestIteration:
    def test_zero_rhs_zero_theta_stays_zero(self):
        Z = separated_centers(12)
        solver = ep2_setup(SPEC, Z, s=6, q=2, seed=1)
        theta = np.zeros((12, 1))
        ep2_iteration(solver, theta, np.zeros((12, 1)), np.arange(4))
        np.testing.assert_array_equal(theta, np.zeros((12, 1)))

    def test_full_batch_q0_is_richardson(self):
        Z = separated_centers(8)
        K = kernel_matrix(SPEC, Z, Z)
        h = np.random.default_rng(2).standard_normal((8, 1))
        solver = ep2_setup(SPEC, Z, s=1, q=0, batch_size=8, eta=0.5, seed=2)
        theta = np.zeros((8, 1))
        ref = np.zeros((8, 1))
        for _ in range(3):
            ep2_iteration(solver, theta, h, np.arange(8))
            ref = ref - (0.5 / 8) * (K @ ref - h)
        np.testing.assert_allclose(theta, ref, atol=1e-12)

    def test_single_iteration_matches_dense_oracle(self):
        Z = separated_centers(6, seed=3)
        solver = ep2_setup(SPEC, Z, s=4, q=2, batch_size=3, eta=0.7, seed=3)
        rng = np.random.default_rng(4)
        h = rng.standard_normal((6, 2))
        theta = rng.standard_normal((6, 2))
        batch = np.array([5, 0, 2])

        ref = theta.copy()
        K = kernel_matrix(SPEC, Z, Z)
        g = K[batch] @ ref - h[batch]
        step = 0.7 / 3
        E, D = solver.eig.eigenvectors, np.diag(solver.d_weights)
        correction = E @ D @ E.T @ K[np.ix_(batch, solver.nystrom_indices)].T @ g
        ref[batch] -= step * g
        ref[solver.nystrom_indices] += 4 * step * correction  # s = 4

        ep2_iteration(solver, theta, h, batch)
        np.testing.assert_allclose(theta, ref, atol=1e-12)

    def test_batch_index_out_of_range(self):
        Z = separated_centers(5)
        solver = ep2_setup(SPEC, Z, s=3, q=1, seed=5)
        with pytest.raises(IndexError):
            ep2_iteration(solver, np.zeros((5, 1)), np.zeros((5, 1)), np.array([5]))


class TestSolve:
    def test_zero_rhs_gives_zero(self):
        Z = separated_centers(10)
        solver = ep2_setup(SPEC, Z, s=5, q=1, seed=6)
        theta = ep2_solve(solver, np.zeros((10, 1)), epochs=4)
        np.testing.assert_array_equal(theta, np.zeros((10, 1)))

    def test_converges_to_dense_solve(self):
        Z = separated_centers(200, seed=7)
        K = kernel_matrix(SPEC, Z, Z)
        h = np.random.default_rng(8).standard_normal((200, 1))
        solver = ep2_setup(SPEC, Z, s=100, q=10, lr_rule=CORRECTED_RULE, seed=8)
        theta = ep2_solve(solver, h, epochs=50)
        rel = np.linalg.norm(K @ theta - h) / np.linalg.norm(h)
        assert rel < 1e-3

    def test_residual_improves_with_epochs(self):
        Z = separated_centers(60, seed=9)
        K = kernel_matrix(SPEC, Z, Z)
        h = np.random.default_rng(10).standard_normal((60, 1))
        solver = ep2_setup(SPEC, Z, s=30, q=4, lr_rule=CORRECTED_RULE, seed=11)
        r1 = np.linalg.norm(K @ ep2_solve(solver, h, epochs=1) - h)
        r10 = np.linalg.norm(K @ ep2_solve(solver, h, epochs=10) - h)
        assert r10 <= r1

    def test_fixed_point_is_stationary_full_batch(self):
        Z = separated_centers(12, seed=12)
        K = kernel_matrix(SPEC, Z, Z)
        h = np.random.default_rng(13).standard_normal((12, 1))
        theta_star = np.linalg.solve(K, h)
        solver = ep2_setup(SPEC, Z, s=12, q=3, batch_size=12, seed=13)
        theta = theta_star.copy()
        ep2_iteration(solver, theta, h, np.arange(12))
        np.testing.assert_allclose(theta, theta_star, atol=1e-10)

    def test_1d_rhs_round_trip(self):
        Z = separated_centers(9, seed=14)
        solver = ep2_setup(SPEC, Z, s=5, q=1, seed=14)
        theta = ep2_solve(solver, np.zeros(9), epochs=1)
        assert theta.shape == (9,)

    def test_rejects_nonfinite_rhs(self):
        Z = separated_centers(6)
        solver = ep2_setup(SPEC, Z, s=3, q=1, seed=15)
        with pytest.raises(ValueError, match="finite"):
            ep2_solve(solver, np.full((6, 1), np.nan))


class TestHilbertEmulation:
    @pytest.mark.parametrize("p,q", [(16, 3), (32, 5)])
    def test_full_batch_full_subsample_equals_flattened_richardson(self, p, q):
        # with s=p and m=p one update collapses to
        # theta <- theta - (eta/p) (I - Q) (K(Z,Z) theta - h)
        Z = separated_centers(p, seed=20 + p)
        K = kernel_matrix(SPEC, Z, Z)
        solver = ep2_setup(SPEC, Z, s=p, q=q, batch_size=p, eta=1.3, seed=16)
        np.testing.assert_array_equal(solver.nystrom_indices, np.arange(p))

        pc = NystromPreconditioner(
            eig=top_q_eigensystem(K, q), anchor_points=Z, mode=EXACT_Q
        )
        rng = np.random.default_rng(17)
        h = rng.standard_normal((p, 1))
        theta = rng.standard_normal((p, 1))
        ref = theta - (1.3 / p) * apply_I_minus_Q(pc, K @ theta - h)
        ep2_iteration(solver, theta, h, np.arange(p))
        np.testing.assert_allclose(theta, ref, atol=1e-10)
