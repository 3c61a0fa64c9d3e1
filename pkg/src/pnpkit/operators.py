"""Linear forward operators with adjoints and the associated linear solvers.

All operators are immutable and safe to share between concurrent solver
runs.  Circulant operators (periodic convolutions) expose their frequency
response, which gives exact FFT-domain solves for the shifted normal
equations; everything else falls back to conjugate gradients on the normal
equations with a certified relative residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ShapeError, Signal, SolveError, as_array, load_signal

CG_RTOL = 1e-10
SVD_MAX_DIM = 512


class LinearOp:
    """Forward/adjoint operator pair between fixed shapes.

    Subclasses implement ``_apply`` and ``_adjoint`` on plain arrays; the
    public methods accept and return either Signals or arrays, matching the
    input type.
    """

    kind = "abstract"

    def __init__(self, in_shape, out_shape):
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_shape = tuple(int(s) for s in out_shape)

    def _apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _adjoint(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, x):
        arr = as_array(x)
        if arr.shape != self.in_shape:
            raise ShapeError(f"{self.kind} operator expects {self.in_shape}, got {arr.shape}")
        out = self._apply(arr)
        return Signal.from_array(out) if isinstance(x, Signal) else out

    def adjoint(self, y):
        arr = as_array(y)
        if arr.shape != self.out_shape:
            raise ShapeError(f"{self.kind} adjoint expects {self.out_shape}, got {arr.shape}")
        out = self._adjoint(arr)
        return Signal.from_array(out) if isinstance(y, Signal) else out

    @property
    def in_size(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_size(self) -> int:
        return int(np.prod(self.out_shape))


class DenseOp(LinearOp):
    kind = "dense"

    def __init__(self, matrix, in_shape=None, out_shape=None):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError("dense operator needs a 2-D matrix")
        m, n = matrix.shape
        super().__init__(in_shape or (n,), out_shape or (m,))
        if self.in_size != n or self.out_size != m:
            raise ShapeError("matrix size does not match in/out shapes")
        self.matrix = matrix
        self.matrix.setflags(write=False)

    def _apply(self, x):
        return (self.matrix @ x.reshape(-1)).reshape(self.out_shape)

    def _adjoint(self, y):
        return (self.matrix.T @ y.reshape(-1)).reshape(self.in_shape)


class DiagonalOp(LinearOp):
    kind = "diagonal"

    def __init__(self, diag):
        diag = as_array(diag)
        super().__init__(diag.shape, diag.shape)
        self.diag = diag.copy()
        self.diag.setflags(write=False)

    def _apply(self, x):
        return self.diag * x

    def _adjoint(self, y):
        return self.diag * y


class MaskOp(LinearOp):
    """Self-adjoint projection that zeroes entries where the mask is False."""

    kind = "mask"

    def __init__(self, mask):
        mask = as_array(mask) != 0
        super().__init__(mask.shape, mask.shape)
        self.mask = mask
        self.mask.setflags(write=False)

    def _apply(self, x):
        return np.where(self.mask, x, 0.0)

    _adjoint = _apply


class CirculantOp(LinearOp):
    """Periodic convolution; diagonalized by the FFT.

    ``freq_response`` holds the transfer function on the FFT grid of the
    image shape.  For 3-D inputs the same 2-D response is applied to each
    channel.
    """

    kind = "circulant-conv"

    def __init__(self, freq_response, image_shape, kernel=None):
        super().__init__(tuple(image_shape), tuple(image_shape))
        self.freq_response = np.asarray(freq_response, dtype=np.complex128)
        self.freq_response.setflags(write=False)
        self.kernel = None if kernel is None else np.asarray(kernel, dtype=np.float64)
        self._axes = tuple(range(self.freq_response.ndim))

    def _filter(self, x, response):
        spec = np.fft.fftn(x, axes=self._axes)
        if x.ndim == response.ndim + 1:
            spec = spec * response[..., None]
        else:
            spec = spec * response
        return np.fft.ifftn(spec, axes=self._axes).real

    def _apply(self, x):
        return self._filter(x, self.freq_response)

    def _adjoint(self, y):
        return self._filter(y, np.conj(self.freq_response))

    @property
    def spectral_norm(self) -> float:
        return float(np.max(np.abs(self.freq_response)))


class CompositeOp(LinearOp):
    """Composition outer(inner(x))."""

    kind = "composite"

    def __init__(self, outer: LinearOp, inner: LinearOp):
        if inner.out_shape != outer.in_shape:
            raise ShapeError(
                f"cannot compose: inner out {inner.out_shape} vs outer in {outer.in_shape}"
            )
        super().__init__(inner.in_shape, outer.out_shape)
        self.outer = outer
        self.inner = inner

    def _apply(self, x):
        return self.outer._apply(self.inner._apply(x))

    def _adjoint(self, y):
        return self.inner._adjoint(self.outer._adjoint(y))


def compose(outer: LinearOp, inner: LinearOp) -> CompositeOp:
    return CompositeOp(outer, inner)


def identity_op(shape) -> DiagonalOp:
    return DiagonalOp(np.ones(tuple(shape)))


def zero_op(shape) -> DiagonalOp:
    return DiagonalOp(np.zeros(tuple(shape)))


def make_blur(kernel, image_shape) -> CirculantOp:
    """Periodic (circular) convolution with ``kernel`` on ``image_shape``.

    Kernel sides must be odd; the kernel is centered, so a delta kernel is
    the identity.  A 2-D kernel on a 3-D [h, w, c] shape acts per channel.
    The adjoint is convolution with the flipped kernel.
    """
    kernel = as_array(kernel)
    image_shape = tuple(int(s) for s in image_shape)
    spatial = image_shape[: kernel.ndim]
    if kernel.ndim == len(image_shape) - 1 and len(image_shape) >= 2:
        pass  # per-channel application
    elif kernel.ndim != len(image_shape):
        raise ShapeError(
            f"kernel ndim {kernel.ndim} incompatible with image shape {image_shape}"
        )
    if any(s % 2 == 0 for s in kernel.shape):
        raise ShapeError(f"kernel sides must be odd, got {kernel.shape}")
    if any(k > s for k, s in zip(kernel.shape, spatial)):
        raise ShapeError(f"kernel {kernel.shape} larger than image {spatial}")
    embedded = np.zeros(spatial)
    slices = tuple(slice(0, k) for k in kernel.shape)
    embedded[slices] = kernel
    center = tuple(k // 2 for k in kernel.shape)
    embedded = np.roll(embedded, tuple(-c for c in center), axis=tuple(range(kernel.ndim)))
    freq = np.fft.fftn(embedded)
    return CirculantOp(freq, image_shape, kernel=kernel)


def make_mask(mask) -> MaskOp:
    """Masking operator: keeps entries where ``mask`` is true, zeroes the rest."""
    return MaskOp(as_array(mask))


@dataclass(frozen=True)
class SvdFactors:
    """Singular value decomposition K = U diag(s) Vt with s descending."""

    s: np.ndarray
    u: np.ndarray
    vt: np.ndarray


def to_dense_matrix(op: LinearOp) -> np.ndarray:
    """Materialize an operator as a dense (out_size x in_size) matrix."""
    n = op.in_size
    cols = np.empty((op.out_size, n))
    basis = np.zeros(op.in_shape)
    flat = basis.reshape(-1)
    for j in range(n):
        flat[j] = 1.0
        cols[:, j] = op._apply(basis).reshape(-1)
        flat[j] = 0.0
    return cols


def as_dense(op: LinearOp) -> DenseOp:
    if isinstance(op, DenseOp):
        return op
    return DenseOp(to_dense_matrix(op), op.in_shape, op.out_shape)


def svd_factors(op: LinearOp) -> SvdFactors:
    """Dense SVD of a small operator (sides capped at 512)."""
    if max(op.in_size, op.out_size) > SVD_MAX_DIM:
        raise ShapeError(f"svd_factors limited to dimension {SVD_MAX_DIM}")
    matrix = as_dense(op).matrix
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    return SvdFactors(s, u, vt)


def naive_svd_solve(op: LinearOp, y, tol: float = 0.0):
    """Pseudoinverse solution sum_m <y, u_m>/s_m v_m, truncating s_m <= tol.

    Exhibits noise amplification when small singular values are kept; the
    truncation tolerance handles rank deficiency.
    """
    factors = svd_factors(op)
    y_arr = as_array(y).reshape(-1)
    coeff = factors.u.T @ y_arr
    keep = factors.s > tol
    inv = np.zeros_like(factors.s)
    inv[keep] = 1.0 / factors.s[keep]
    x = factors.vt.T @ (coeff * inv)
    out = x.reshape(op.in_shape)
    return Signal.from_array(out) if isinstance(y, Signal) else out


def _cg(matvec, b: np.ndarray, rtol: float, max_iter: int) -> tuple[np.ndarray, float]:
    """Conjugate gradients for SPD systems; returns (x, relative residual)."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(np.vdot(r, r))
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x, 0.0
    threshold = (rtol * b_norm) ** 2
    for _ in range(max_iter):
        if rs <= threshold:
            break
        ap = matvec(p)
        alpha = rs / float(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        rs_new = float(np.vdot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, float(np.sqrt(rs)) / b_norm


def solve_shifted_normal(op: LinearOp, rho: float, b):
    """Solve (K^T K + rho*I) x = b to relative residual <= 1e-10.

    Uses exact frequency-domain division for circulant operators and exact
    componentwise division for diagonal/mask kinds; otherwise conjugate
    gradients with at most 10*n iterations (SolveError on stagnation).
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    b_arr = as_array(b)
    if b_arr.shape != op.in_shape:
        raise ShapeError(f"rhs shape {b_arr.shape} does not match operator {op.in_shape}")

    if isinstance(op, CirculantOp):
        denom = np.abs(op.freq_response) ** 2 + rho
        spec = np.fft.fftn(b_arr, axes=op._axes)
        if b_arr.ndim == denom.ndim + 1:
            spec = spec / denom[..., None]
        else:
            spec = spec / denom
        x = np.fft.ifftn(spec, axes=op._axes).real
    elif isinstance(op, DiagonalOp):
        x = b_arr / (op.diag**2 + rho)
    elif isinstance(op, MaskOp):
        x = b_arr / (op.mask.astype(np.float64) + rho)
    else:
        n = op.in_size

        def matvec(v):
            return op._adjoint(op._apply(v.reshape(op.in_shape))).reshape(-1) + rho * v

        x_flat, res = _cg(matvec, b_arr.reshape(-1), CG_RTOL, 10 * n)
        if res > CG_RTOL:
            raise SolveError("conjugate gradients stagnated", residual=res)
        x = x_flat.reshape(op.in_shape)

    return Signal.from_array(x) if isinstance(b, Signal) else x


def tikhonov_solve(op: LinearOp, y, alpha: float):
    """Ridge solution x = (K^T K + alpha*I)^{-1} K^T y for alpha > 0."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y_arr = as_array(y)
    rhs = op._adjoint(y_arr)
    x = solve_shifted_normal(op, alpha, rhs)
    return Signal.from_array(as_array(x)) if isinstance(y, Signal) else x


def adjoint_defect(op: LinearOp, rng, probes: int = 100) -> float:
    """Max relative defect of <Kx, y> = <x, K^T y> over random probe pairs."""
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.out_shape)
        kx = op._apply(x)
        kty = op._adjoint(y)
        lhs = float(np.vdot(kx, y))
        rhs = float(np.vdot(x, kty))
        scale = np.linalg.norm(kx) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(kty)
        if scale == 0.0:
            continue
        worst = max(worst, abs(lhs - rhs) / scale)
    return worst


def operator_norm(op: LinearOp, rng, iters: int = 2000, tol: float = 1e-13) -> float:
    """Spectral norm ||K||_2 by power iteration on K^T K."""
    v = rng.standard_normal(op.in_shape)
    v /= np.linalg.norm(v)
    value = 0.0
    for _ in range(iters):
        w = op._adjoint(op._apply(v))
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 0.0
        new_value = norm  # Rayleigh quotient of K^T K at unit v
        v = w / norm
        if abs(new_value - value) <= tol * max(new_value, 1e-300):
            value = new_value
            break
        value = new_value
    return float(np.sqrt(value))


def load_dense_operator(path) -> DenseOp:
    """Load a dense operator from the raw float64 format (shape [m, n])."""
    sig = load_signal(path)
    if len(sig.shape) != 2:
        raise ShapeError(f"dense operator file must have shape [m, n], got {sig.shape}")
    return DenseOp(sig.to_array())
