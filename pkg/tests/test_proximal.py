import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pnpkit import (
    ShapeError,
    SolveError,
    box_prox,
    haar_inverse,
    haar_transform,
    identity_op,
    l1_prox,
    linf_ball_prox,
    make_blur,
    moreau_check,
    prox_box,
    prox_quadratic_fidelity,
    prox_tv,
    prox_wavelet_l1,
    soft_threshold,
    squared_l2_prox,
    tv_conj_prox,
    tv_prox,
    tv_value,
    wavelet_l1_prox,
    zero_op,
)
from pnpkit.operators import as_dense


class TestSoftThreshold:
    def test_shrinks_above_threshold(self):
        assert soft_threshold(np.array([1.5]), 0.5)[0] == pytest.approx(1.0)

    def test_kills_below_threshold(self):
        assert soft_threshold(np.array([-0.3]), 0.5)[0] == 0.0

    def test_tau_zero_identity(self, rng):
        v = rng.standard_normal(20)
        np.testing.assert_array_equal(soft_threshold(v, 0.0), v)

    def test_negative_tau_rejected(self):
        with pytest.raises(ValueError):
            soft_threshold(np.zeros(2), -1.0)

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=8),
           st.floats(0, 5))
    @settings(max_examples=80, deadline=None)
    def test_componentwise_formula(self, values, tau):
        v = np.array(values)
        out = soft_threshold(v, tau)
        expected = np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
        np.testing.assert_array_equal(out, expected)


class TestHaar:
    def test_energy_preserved(self, rng):
        v = rng.standard_normal(16)
        c = haar_transform(v, 2)
        assert np.linalg.norm(c) == pytest.approx(np.linalg.norm(v), abs=1e-12)

    def test_inverse(self, rng):
        v = rng.standard_normal((8, 8))
        c = haar_transform(v, 3)
        np.testing.assert_allclose(haar_inverse(c, 3), v, atol=1e-12)

    def test_shape_divisibility(self):
        with pytest.raises(ShapeError):
            haar_transform(np.zeros(6), 2)

    def _dense_haar_matrix(self, n, levels):
        mat = np.empty((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = 1.0
            mat[:, j] = haar_transform(e, levels)
        return mat

    def test_matrix_is_orthonormal(self):
        mat = self._dense_haar_matrix(8, 3)
        np.testing.assert_allclose(mat.T @ mat, np.eye(8), atol=1e-12)

    def test_prox_matches_dense_matrix_oracle(self, rng):
        # explicit W: prox = W^T soft(W v)
        v = rng.standard_normal(8)
        tau = 0.3
        mat = self._dense_haar_matrix(8, 2)
        coeffs = mat @ v
        shrunk = np.sign(coeffs) * np.maximum(np.abs(coeffs) - tau, 0.0)
        oracle = mat.T @ shrunk
        assert np.max(np.abs(prox_wavelet_l1(v, tau, 2) - oracle)) <= 1e-12

    def test_tau_zero_identity(self, rng):
        v = rng.standard_normal((4, 4))
        np.testing.assert_allclose(prox_wavelet_l1(v, 0.0, 1), v, atol=1e-13)

    def test_constant_signal_only_coarse_shrinks(self):
        v = np.full(8, 1.0)
        out = prox_wavelet_l1(v, 0.1, 3)
        # detail coefficients are zero, so the output stays constant
        assert np.max(out) - np.min(out) <= 1e-12
        assert np.all(out < 1.0)


class TestProxTv:
    def test_lambda_zero_identity(self, rng):
        v = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(prox_tv(v, 0.0), v)

    def test_two_point_analytic(self):
        # argmin (t-1)^2 + 2*lam*|t| over antisymmetric pairs: t = 1 - lam
        out = prox_tv(np.array([1.0, -1.0]), 0.5, tol=1e-14)
        np.testing.assert_allclose(out, [0.5, -0.5], atol=1e-6)

    def test_two_point_saturation(self):
        for lam in (1.0, 1.7):
            out = prox_tv(np.array([1.0, -1.0]), lam, tol=1e-14)
            np.testing.assert_allclose(out, [0.0, 0.0], atol=1e-6)

    def test_max_iter_error_carries_gap(self, rng):
        v = 10.0 * rng.standard_normal((16, 16))
        with pytest.raises(SolveError) as exc:
            prox_tv(v, 5.0, tol=1e-16, max_iter=3)
        assert exc.value.residual is not None and exc.value.residual > 0

    def test_gap_certificate_via_perturbation(self, rng):
        v = rng.standard_normal((6, 6))
        lam = 0.4
        x = prox_tv(v, lam, tol=1e-13)

        def primal(z):
            return 0.5 * np.sum((z - v) ** 2) + lam * tv_value(z)

        base = primal(x)
        for _ in range(64):
            z = x + 1e-3 * rng.standard_normal((6, 6))
            assert primal(z) >= base - 1e-12

    def test_nonexpansive_1d(self, rng):
        for _ in range(150):
            u = rng.standard_normal(4)
            v = rng.standard_normal(4)
            pu = prox_tv(u, 0.3, tol=1e-14)
            pv = prox_tv(v, 0.3, tol=1e-14)
            assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-5

    def test_constant_is_fixed_point(self):
        v = np.full((4, 4), 0.7)
        np.testing.assert_allclose(prox_tv(v, 0.5, tol=1e-14), v, atol=1e-7)


class TestProxQuadraticFidelity:
    def test_zero_operator_returns_v(self, rng):
        v = rng.standard_normal(6)
        out = prox_quadratic_fidelity(v, 0.8, zero_op((6,)), np.zeros(6))
        np.testing.assert_allclose(out, v, atol=1e-12)

    def test_identity_closed_form(self, rng):
        v = rng.standard_normal(6)
        y = rng.standard_normal(6)
        lam = 0.7
        out = prox_quadratic_fidelity(v, lam, identity_op((6,)), y)
        np.testing.assert_allclose(out, (v + lam * y) / (1 + lam), atol=1e-12)

    def test_circulant_vs_dense_oracle(self, rng):
        kernel = rng.uniform(0, 1, (3, 3))
        kernel /= kernel.sum()
        op = make_blur(kernel, (5, 5))
        v = rng.standard_normal((5, 5))
        y = rng.standard_normal((5, 5))
        lam = 1.3
        out = prox_quadratic_fidelity(v, lam, op, y)
        k_mat = np.array(as_dense(op).matrix)
        oracle = np.linalg.solve(
            np.eye(25) + lam * k_mat.T @ k_mat,
            v.reshape(-1) + lam * k_mat.T @ y.reshape(-1),
        )
        assert np.max(np.abs(out.reshape(-1) - oracle)) <= 1e-9


class TestProxBox:
    def test_inside_unchanged(self):
        v = np.array([0.2, 0.8])
        np.testing.assert_array_equal(prox_box(v, 0.0, 1.0), v)

    def test_clamps(self):
        assert prox_box(np.array([2.0]), 0.0, 1.0)[0] == 1.0

    def test_idempotent(self, rng):
        v = rng.standard_normal(30) * 3
        once = prox_box(v, -0.5, 0.5)
        np.testing.assert_array_equal(prox_box(once, -0.5, 0.5), once)

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            prox_box(np.zeros(2), 1.0, 0.0)


class TestMoreau:
    def test_l1_with_linf_ball(self):
        v = np.array([2.0, -0.4, 0.9])
        assert moreau_check(l1_prox(1.0), linf_ball_prox(1.0), v) == pytest.approx(0.0, abs=1e-14)

    def test_quadratic_self_conjugate(self, rng):
        v = rng.standard_normal(12)
        assert moreau_check(squared_l2_prox(1.0), squared_l2_prox(1.0), v) <= 1e-14

    def test_tv_pair_via_independent_dual_solves(self, rng):
        lam = 0.3
        p = tv_prox(lam, tol=1e-13)
        p_conj = tv_conj_prox(lam, tol=1e-13)
        for shape in ((12,), (4, 4)):
            for _ in range(5):
                v = rng.standard_normal(shape)
                assert moreau_check(p, p_conj, v) <= 1e-5


class TestProxMapProperties:
    def cases(self):
        return [
            (l1_prox(0.7), None),
            (box_prox(0.0, 1.0), None),
            (squared_l2_prox(2.0), None),
            (wavelet_l1_prox(0.5, levels=2), (8,)),
        ]

    def test_nonexpansive(self, rng):
        for prox, shape in self.cases():
            shape = shape or (10,)
            for _ in range(1000):
                u = rng.standard_normal(shape)
                v = rng.standard_normal(shape)
                pu = prox.evaluate(u, 1.0)
                pv = prox.evaluate(v, 1.0)
                assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-10

    def test_fixed_points_are_minimizers(self):
        # l1: 0 is the unique minimizer and the unique fixed point at any lam
        assert np.all(l1_prox(1.0).evaluate(np.zeros(4), 1.0) == 0.0)
        # box: any interior point is fixed
        v = np.array([0.25, 0.75])
        np.testing.assert_array_equal(box_prox(0.0, 1.0).evaluate(v, 1.0), v)
        # quadratic: origin is fixed
        assert np.all(squared_l2_prox(1.0).evaluate(np.zeros(3), 2.0) == 0.0)

    def test_variational_inequality(self, rng):
        # prox output beats random perturbations on the prox objective
        for prox, shape in self.cases():
            if prox.objective is None:
                continue
            shape = shape or (10,)
            v = rng.standard_normal(shape)
            lam = 0.8
            x = np.asarray(prox.evaluate(v, lam))

            def total(z):
                return prox.objective(z) + np.sum((z - v) ** 2) / (2 * lam)

            base = total(x)
            for _ in range(64):
                z = x + 1e-3 * rng.standard_normal(shape)
                assert total(z) >= base - 1e-12

    def test_scaled_evaluate_requires_separable(self, rng):
        with pytest.raises(Exception):
            tv_prox(1.0).evaluate_scaled(rng.standard_normal(4), np.ones(4))
