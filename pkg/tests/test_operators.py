import numpy as np
import pytest

from pnpkit import (
    DenseOp,
    DiagonalOp,
    Rng,
    ShapeError,
    adjoint_defect,
    as_dense,
    compose,
    identity_op,
    load_dense_operator,
    make_blur,
    make_mask,
    naive_svd_solve,
    operator_norm,
    save_signal,
    Signal,
    solve_shifted_normal,
    svd_factors,
    tikhonov_solve,
)


def spatial_convolve_periodic(image, kernel):
    """O(n^2) direct periodic convolution, the blur oracle."""
    h, w = image.shape
    kh, kw = kernel.shape
    cy, cx = kh // 2, kw // 2
    out = np.zeros_like(image)
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for a in range(kh):
                for b in range(kw):
                    ii = (i - (a - cy)) % h
                    jj = (j - (b - cx)) % w
                    acc += kernel[a, b] * image[ii, jj]
            out[i, j] = acc
    return out


class TestBlur:
    def test_delta_kernel_is_identity(self, rng):
        kernel = np.zeros((3, 3))
        kernel[1, 1] = 1.0
        op = make_blur(kernel, (8, 8))
        x = rng.standard_normal((8, 8))
        np.testing.assert_allclose(op.apply(x), x, atol=1e-13)

    def test_constant_preserved(self):
        op = make_blur(np.ones((5, 5)) / 25.0, (16, 16))
        x = np.full((16, 16), 0.42)
        np.testing.assert_allclose(op.apply(x), x, atol=1e-13)

    def test_against_spatial_oracle(self, rng):
        kernel = rng.uniform(0, 1, (3, 5))
        kernel /= kernel.sum()
        op = make_blur(kernel, (8, 8))
        x = rng.standard_normal((8, 8))
        expected = spatial_convolve_periodic(x, kernel)
        assert np.max(np.abs(op.apply(x) - expected)) <= 1e-12

    def test_adjoint_is_flipped_kernel(self, rng):
        kernel = rng.uniform(0, 1, (3, 3))
        kernel /= kernel.sum()
        op = make_blur(kernel, (8, 8))
        x = rng.standard_normal((8, 8))
        flipped = kernel[::-1, ::-1]
        expected = spatial_convolve_periodic(x, flipped)
        assert np.max(np.abs(op.adjoint(x) - expected)) <= 1e-12

    def test_even_kernel_rejected(self):
        with pytest.raises(ShapeError):
            make_blur(np.ones((2, 3)), (8, 8))

    def test_channelwise_on_color(self, rng):
        kernel = np.ones((3, 3)) / 9.0
        op = make_blur(kernel, (8, 8, 3))
        x = rng.standard_normal((8, 8, 3))
        out = op.apply(x)
        mono = make_blur(kernel, (8, 8))
        for c in range(3):
            np.testing.assert_allclose(out[:, :, c], mono.apply(x[:, :, c]), atol=1e-12)


class TestMask:
    def test_all_true_identity(self, rng):
        op = make_mask(np.ones((4, 4)))
        x = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(op.apply(x), x)

    def test_all_false_zero(self, rng):
        op = make_mask(np.zeros((4, 4)))
        x = rng.standard_normal((4, 4))
        np.testing.assert_array_equal(op.apply(x), np.zeros((4, 4)))

    def test_projection_idempotent(self, rng):
        mask = rng.uniform(0, 1, (6, 6)) > 0.5
        op = make_mask(mask)
        x = rng.standard_normal((6, 6))
        np.testing.assert_array_equal(op.apply(op.apply(x)), op.apply(x))


class TestAdjoints:
    def build_ops(self, rng):
        kernel = rng.uniform(0, 1, (3, 3))
        kernel /= kernel.sum()
        return [
            make_blur(kernel, (8, 8)),
            make_mask(rng.uniform(0, 1, (8, 8)) > 0.4),
            DenseOp(rng.standard_normal((6, 9))),
            DiagonalOp(rng.standard_normal(12)),
            compose(DenseOp(rng.standard_normal((4, 6))), DenseOp(rng.standard_normal((6, 5)))),
        ]

    def test_adjoint_probes(self, rng):
        for op in self.build_ops(rng):
            assert adjoint_defect(op, Rng(777), probes=100) <= 1e-10

    def test_circulant_norm_matches_power_iteration(self, rng):
        kernel = np.ones((5, 5)) / 25.0
        op = make_blur(kernel, (16, 16))
        estimated = operator_norm(op, Rng(3), iters=5000, tol=1e-15)
        assert abs(op.spectral_norm - estimated) <= 1e-10


class TestTikhonov:
    def test_identity_small_alpha_limit(self, rng):
        y = rng.standard_normal(10)
        x = tikhonov_solve(identity_op((10,)), y, 1e-12)
        np.testing.assert_allclose(x, y, atol=1e-10)

    def test_diagonal_closed_form(self):
        # sigma_i * y_i / (sigma_i^2 + alpha) = (0.8, 0.5)
        op = DiagonalOp(np.array([2.0, 1.0]))
        x = tikhonov_solve(op, np.array([2.0, 1.0]), 1.0)
        np.testing.assert_allclose(x, [0.8, 0.5], atol=1e-12)

    def test_circulant_vs_dense_cg_oracle(self, rng):
        kernel = rng.uniform(0, 1, (3, 3))
        kernel /= kernel.sum()
        op = make_blur(kernel, (6, 6))
        y = rng.standard_normal((6, 6))
        alpha = 0.05
        x = tikhonov_solve(op, y, alpha)

        k_mat = np.array(as_dense(op).matrix)
        oracle = np.linalg.solve(k_mat.T @ k_mat + alpha * np.eye(36),
                                 k_mat.T @ y.reshape(-1))
        assert np.max(np.abs(x.reshape(-1) - oracle)) <= 1e-8

    def test_euler_lagrange_condition(self, rng):
        op = DenseOp(rng.standard_normal((7, 7)))
        y = rng.standard_normal(7)
        alpha = 0.3
        x = tikhonov_solve(op, y, alpha)
        residual = op.adjoint(op.apply(x) - y) + alpha * x
        assert np.linalg.norm(residual) <= 1e-8 * max(np.linalg.norm(y), 1.0)

    def test_alpha_must_be_positive(self):
        with pytest.raises(ValueError):
            tikhonov_solve(identity_op((3,)), np.zeros(3), 0.0)

    def test_signal_in_signal_out(self, rng):
        y = Signal.from_array(rng.standard_normal(5))
        x = tikhonov_solve(identity_op((5,)), y, 0.5)
        assert isinstance(x, Signal)


class TestNaiveSvd:
    def test_amplification(self):
        op = DenseOp(np.diag([1.0, 1e-3]))
        x = naive_svd_solve(op, np.array([1.0, 1.0]))
        np.testing.assert_allclose(x, [1.0, 1000.0], atol=1e-9)

    def test_truncation(self):
        op = DenseOp(np.diag([1.0, 1e-3]))
        x = naive_svd_solve(op, np.array([1.0, 1.0]), tol=1e-2)
        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-12)

    def test_vs_normal_equations_oracle(self, rng):
        mat = rng.standard_normal((5, 5))
        op = DenseOp(mat)
        y = rng.standard_normal(5)
        x = naive_svd_solve(op, y)
        oracle = np.linalg.solve(mat.T @ mat, mat.T @ y)
        assert np.max(np.abs(x - oracle)) <= 1e-8

    def test_factor_reconstruction(self, rng):
        mat = rng.standard_normal((6, 4))
        f = svd_factors(DenseOp(mat))
        recon = f.u @ np.diag(f.s) @ f.vt
        assert np.linalg.norm(recon - mat) / np.linalg.norm(mat) <= 1e-10
        assert np.all(np.diff(f.s) <= 0)


class TestShiftedNormal:
    def test_zero_operator(self, rng):
        op = DiagonalOp(np.zeros(6))
        b = rng.standard_normal(6)
        np.testing.assert_allclose(solve_shifted_normal(op, 2.0, b), b / 2.0, atol=1e-14)

    def test_identity_operator(self, rng):
        b = rng.standard_normal(6)
        out = solve_shifted_normal(identity_op((6,)), 3.0, b)
        np.testing.assert_allclose(out, b / 4.0, atol=1e-14)

    def test_circulant_vs_dense_oracle(self, rng):
        kernel = rng.uniform(0, 1, (3, 3))
        kernel /= kernel.sum()
        op = make_blur(kernel, (5, 5))
        b = rng.standard_normal((5, 5))
        rho = 0.7
        x = solve_shifted_normal(op, rho, b)
        k_mat = np.array(as_dense(op).matrix)
        oracle = np.linalg.solve(k_mat.T @ k_mat + rho * np.eye(25), b.reshape(-1))
        assert np.max(np.abs(x.reshape(-1) - oracle)) <= 1e-9

    def test_dense_cg_matches_direct(self, rng):
        mat = rng.standard_normal((8, 8))
        op = DenseOp(mat)
        b = rng.standard_normal(8)
        x = solve_shifted_normal(op, 0.4, b)
        oracle = np.linalg.solve(mat.T @ mat + 0.4 * np.eye(8), b)
        assert np.max(np.abs(x - oracle)) <= 1e-8

    def test_rho_must_be_positive(self):
        with pytest.raises(ValueError):
            solve_shifted_normal(identity_op((3,)), 0.0, np.zeros(3))

    def test_residual_certified(self, rng):
        mat = rng.standard_normal((10, 10))
        op = DenseOp(mat)
        b = rng.standard_normal(10)
        x = solve_shifted_normal(op, 0.1, b)
        res = np.linalg.norm(mat.T @ (mat @ x) + 0.1 * x - b) / np.linalg.norm(b)
        assert res <= 1e-10


class TestDenseIo:
    def test_load_dense_operator(self, tmp_path, rng):
        mat = rng.standard_normal((3, 4))
        path = tmp_path / "op.raw"
        save_signal(Signal.from_array(mat), path)
        op = load_dense_operator(path)
        np.testing.assert_array_equal(op.matrix, mat)

    def test_load_dense_rejects_vector(self, tmp_path):
        path = tmp_path / "vec.raw"
        save_signal(Signal.from_array(np.zeros(4)), path)
        with pytest.raises(ShapeError):
            load_dense_operator(path)
