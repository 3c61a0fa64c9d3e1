"""Denoisers and the diagnostics that gate plug-and-play convergence claims.

Every denoiser is a pure sigma-parameterized map.  Linear instances expose
their exact residual-map norm; gradient-step instances expose the potential
they descend; denoisers that are exact proximal maps expose that potential
too, so solver traces can evaluate the variational objective they minimize.

The diagnostics (residual Lipschitz constant, Jacobian asymmetry, local
homogeneity defect) are estimated through central finite differences and are
meant for desk-scale signals (dense Jacobians capped at 4096 entries).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.fft
from scipy import ndimage

from .core import DivergenceError, Rng, Signal, as_array
from .gmm import GmmPrior, posterior_mean
from .operators import CirculantOp, DenseOp, DiagonalOp, LinearOp, MaskOp, make_blur
from .proximal import haar_inverse, haar_transform, prox_tv, tv_value

JACOBIAN_MAX_DIM = 4096


class Denoiser:
    """A sigma-parameterized denoising map with optional analytic structure.

    Optional hooks (all taking ``(x, sigma)``):

    * ``potential`` / ``grad_potential``: the scalar g and its gradient when
      the map is the gradient step id - grad g.
    * ``prox_potential``: the function phi with D = prox_phi, when the map is
      an exact proximal operator.

    ``residual_norm`` is the exact Lipschitz constant of x - D(x) when the
    map is linear and the constant is known in closed form.
    """

    def __init__(self, fn, tag: str, linear: bool = False, potential=None,
                 grad_potential=None, prox_potential=None, residual_norm=None,
                 weight: float | None = None):
        self._fn = fn
        self.tag = tag
        self.linear = linear
        self.potential = potential
        self.grad_potential = grad_potential
        self.prox_potential = prox_potential
        self.residual_norm = residual_norm
        self.weight = weight

    def apply(self, x, sigma: float = 0.0):
        if sigma < 0:
            raise ValueError("sigma must be nonnegative")
        arr = as_array(x)
        out = self._fn(arr, float(sigma))
        if out.shape != arr.shape:
            raise ValueError(f"denoiser {self.tag!r} changed shape {arr.shape} -> {out.shape}")
        if not np.all(np.isfinite(out)):
            raise DivergenceError(f"denoiser {self.tag!r} produced non-finite output")
        return Signal.from_array(out) if isinstance(x, Signal) else out

    def __repr__(self):
        return f"Denoiser({self.tag!r})"


# ---------------------------------------------------------------------------
# Classical denoisers
# ---------------------------------------------------------------------------


def gaussian_kernel(sigma: float, ndim: int = 2, radius: int | None = None) -> np.ndarray:
    """Normalized truncated Gaussian kernel with odd sides (sum exactly 1)."""
    if sigma <= 0:
        raise ValueError("kernel sigma must be positive")
    if radius is None:
        radius = max(1, int(math.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g1 = np.exp(-0.5 * (t / sigma) ** 2)
    kernel = g1
    for _ in range(ndim - 1):
        kernel = np.multiply.outer(kernel, g1)
    return kernel / kernel.sum()


def _fitted_gaussian_kernel(sigma: float, shape, radius: int | None) -> np.ndarray:
    # radius clamped so the (odd-sided) kernel fits the image
    ndim = min(len(shape), 2)
    max_radius = (min(shape[:ndim]) - 1) // 2
    if radius is None:
        radius = max(1, int(math.ceil(3.0 * sigma)))
    return gaussian_kernel(sigma, ndim=ndim, radius=max(0, min(radius, max_radius)))


def gaussian_filter_denoiser(kernel_sigma: float, radius: int | None = None) -> Denoiser:
    """Linear smoothing by periodic convolution with a normalized Gaussian.

    The measurement sigma argument is ignored; the filter is fixed by
    ``kernel_sigma``.  Constant images are preserved because the kernel sums
    to one.
    """

    def fn(arr, sigma):
        kernel = _fitted_gaussian_kernel(kernel_sigma, arr.shape, radius)
        op = make_blur(kernel, arr.shape)
        return op._apply(arr)

    return Denoiser(fn, tag=f"gaussian({kernel_sigma})", linear=True)


def nlm_denoiser(patch_radius: int, window_radius: int, h: float) -> Denoiser:
    """Non-local means with periodic boundary handling.

    Each pixel is the weighted average of pixels in the search window, with
    weights exp(-||P_i - P_j||^2 / h^2) normalized to sum to one per pixel;
    patch distances are squared sums over (2*patch_radius+1)^d patches.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if patch_radius < 0 or window_radius < 0:
        raise ValueError("radii must be nonnegative")
    patch_size = 2 * patch_radius + 1

    def fn(arr, sigma):
        if arr.ndim not in (1, 2):
            raise ValueError("nlm supports 1-D and 2-D signals")
        offsets = np.ndindex(*([2 * window_radius + 1] * arr.ndim))
        num = np.zeros_like(arr)
        den = np.zeros_like(arr)
        for off in offsets:
            shift = tuple(o - window_radius for o in off)
            shifted = np.roll(arr, tuple(-s for s in shift), axis=tuple(range(arr.ndim)))
            diff2 = (arr - shifted) ** 2
            # uniform_filter computes the patch mean; rescale to the patch sum
            dist2 = ndimage.uniform_filter(diff2, size=patch_size, mode="wrap")
            dist2 = dist2 * (patch_size**arr.ndim)
            w = np.exp(-dist2 / (h * h))
            num += w * shifted
            den += w
        return num / den

    return Denoiser(fn, tag=f"nlm(p={patch_radius},w={window_radius},h={h})")


def tv_denoiser(lambda_of_sigma: Callable[[float], float] | None = None, c: float = 1.0,
                tol: float | None = None, max_iter: int = 200000) -> Denoiser:
    """TV denoiser: the TV prox with strength lam = c * sigma^2 (or a custom rule)."""
    rule = lambda_of_sigma if lambda_of_sigma is not None else (lambda s: c * s * s)

    def fn(arr, sigma):
        lam = float(rule(sigma))
        if lam == 0.0:
            return arr.copy()
        return as_array(prox_tv(arr, lam, tol=tol, max_iter=max_iter))

    def phi(x, sigma):
        return float(rule(sigma)) * tv_value(x)

    return Denoiser(fn, tag="tv", prox_potential=phi)


# ---------------------------------------------------------------------------
# Linear spectral denoisers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDenoiserFamily:
    """Shrinkage family x -> W^T diag(gains(lam)) W x over a tuneable lam.

    ``transform`` is "dct", "haar", or "identity"; ``gains`` maps lam to the
    per-coefficient gain array on ``shape``.  Every gain must lie in
    (0, 1/(1+lam)], which makes the induced map a contraction with residual
    norm max(1 - gain) vanishing as lam -> 0.
    """

    transform: str
    shape: tuple
    gains: Callable[[float], np.ndarray]
    lambda_range: tuple[float, float] = (0.0, math.inf)
    levels: int = 1

    def __post_init__(self):
        if self.transform not in ("dct", "haar", "identity"):
            raise ValueError(f"unknown transform {self.transform!r}")
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))


def tikhonov_spectral_family(shape, transform: str = "dct", profile=None,
                             levels: int = 1) -> SpectralDenoiserFamily:
    """Family with gains 1 / (1 + lam * profile) for a profile >= 1.

    The default flat profile gives the uniform shrinkage x / (1 + lam).
    """
    shape = tuple(int(s) for s in shape)
    if profile is None:
        profile_arr = np.ones(shape)
    else:
        profile_arr = as_array(profile)
        if profile_arr.shape != shape:
            raise ValueError("profile shape must match the family shape")
        if np.any(profile_arr < 1.0):
            raise ValueError("profile entries must be >= 1 to keep gains <= 1/(1+lam)")
    return SpectralDenoiserFamily(
        transform=transform,
        shape=shape,
        gains=lambda lam: 1.0 / (1.0 + lam * profile_arr),
        lambda_range=(0.0, math.inf),
        levels=levels,
    )


def _spectral_transforms(family: SpectralDenoiserFamily):
    if family.transform == "dct":
        return (lambda a: scipy.fft.dctn(a, norm="ortho"),
                lambda c: scipy.fft.idctn(c, norm="ortho"))
    if family.transform == "haar":
        lv = family.levels
        return (lambda a: as_array(haar_transform(a, lv)),
                lambda c: as_array(haar_inverse(c, lv)))
    return (lambda a: a, lambda c: c)


def linear_spectral_denoiser(family: SpectralDenoiserFamily, lam: float) -> Denoiser:
    """Instantiate one member of a spectral shrinkage family.

    Exposes the exact residual norm max(1 - gain) and, because diagonal
    shrinkage in an orthonormal basis is the prox of a diagonal quadratic,
    the exact potential it is the prox of.
    """
    lo, hi = family.lambda_range
    if not (lo <= lam <= hi):
        raise ValueError(f"lam {lam} outside family range [{lo}, {hi}]")
    gains = np.asarray(family.gains(float(lam)), dtype=np.float64)
    if gains.shape != family.shape:
        raise ValueError("gain array shape does not match the family shape")
    if np.any(gains <= 0) or np.any(gains > 1.0 / (1.0 + lam) + 1e-12):
        raise ValueError("gains must lie in (0, 1/(1+lam)]")
    fwd, inv = _spectral_transforms(family)
    quad = 1.0 / gains - 1.0  # D = prox of (1/2) sum quad_k * coeff_k^2

    def fn(arr, sigma):
        if arr.shape != family.shape:
            raise ValueError(f"expected shape {family.shape}, got {arr.shape}")
        return inv(fwd(arr) * gains)

    def phi(x, sigma):
        coeff = fwd(as_array(x))
        return 0.5 * float(np.sum(quad * coeff * coeff))

    return Denoiser(
        fn,
        tag=f"spectral({family.transform},lam={lam})",
        linear=True,
        prox_potential=phi,
        residual_norm=float(np.max(1.0 - gains)),
    )


# ---------------------------------------------------------------------------
# Gradient-step denoiser with an explicit potential
# ---------------------------------------------------------------------------


def gaussian_smoother(shape, kernel_sigma: float, floor: float = 0.0,
                      radius: int | None = None) -> CirculantOp:
    """Symmetric PSD circulant smoother floor*I + (1-floor)*G G^T.

    G is the normalized Gaussian filter, so the spectrum lies in
    [floor, 1]; a positive floor keeps the induced gradient-step denoiser
    invertible, which its proximal potential requires.
    """
    if not (0.0 <= floor < 1.0):
        raise ValueError("floor must lie in [0, 1)")
    shape = tuple(int(s) for s in shape)
    kernel = _fitted_gaussian_kernel(kernel_sigma, shape, radius)
    g = make_blur(kernel, shape)
    freq = floor + (1.0 - floor) * np.abs(g.freq_response) ** 2
    return CirculantOp(freq.astype(np.complex128), shape)


def _smoother_spectrum(op: LinearOp):
    """Exact eigenvalues of a symmetric smoother when cheaply available."""
    if isinstance(op, CirculantOp):
        return np.real(op.freq_response).reshape(-1)
    if isinstance(op, DiagonalOp):
        return op.diag.reshape(-1)
    if isinstance(op, MaskOp):
        return op.mask.astype(np.float64).reshape(-1)
    if isinstance(op, DenseOp) and op.in_size <= JACOBIAN_MAX_DIM:
        return np.linalg.eigvalsh(op.matrix)
    return None


def _check_symmetric(op: LinearOp) -> None:
    if isinstance(op, (DiagonalOp, MaskOp)):
        return
    if isinstance(op, CirculantOp):
        if np.max(np.abs(np.imag(op.freq_response))) > 1e-10:
            raise ValueError("circulant smoother is not symmetric (complex spectrum)")
        return
    if isinstance(op, DenseOp):
        if not np.allclose(op.matrix, op.matrix.T, atol=1e-10, rtol=0.0):
            raise ValueError("smoother matrix is not symmetric")
        return
    rng = Rng(0)
    for _ in range(8):
        x = rng.standard_normal(op.in_shape)
        y = rng.standard_normal(op.in_shape)
        lhs = float(np.vdot(op._apply(x), y))
        rhs = float(np.vdot(x, op._apply(y)))
        scale = np.linalg.norm(x) * np.linalg.norm(y)
        if abs(lhs - rhs) > 1e-8 * max(scale, 1.0):
            raise ValueError("smoother fails the self-adjointness probe")


def gs_denoiser(smoother: LinearOp, weight: float = 1.0) -> Denoiser:
    """Gradient-step denoiser D = id - grad g with g(x) = 0.5*||x - A x||^2.

    A must be a symmetric smoother with eigenvalues in [0, 1]; then
    grad g = (I - A)^2 has Lipschitz constant ||I - A||^2 <= 1.  ``weight``
    is the default regularization strength the solvers pair with g.  When A
    is circulant with spectrum bounded away from 0ish, D is invertible and
    its exact proximal potential is exposed as well.
    """
    if smoother.in_shape != smoother.out_shape:
        raise ValueError("smoother must be square")
    _check_symmetric(smoother)

    def residual(arr):
        return arr - smoother._apply(arr)

    def grad_g(x, sigma=0.0):
        arr = as_array(x)
        r = residual(arr)
        return r - smoother._apply(r)  # (I - A)^T (I - A) x with A symmetric

    def g_value(x, sigma=0.0):
        return 0.5 * float(np.sum(residual(as_array(x)) ** 2))

    def fn(arr, sigma):
        return arr - grad_g(arr)

    spectrum = _smoother_spectrum(smoother)
    lipschitz = None
    phi = None
    if spectrum is not None:
        lipschitz = float(np.max((1.0 - spectrum) ** 2))
        d_eigs = 1.0 - (1.0 - spectrum) ** 2  # spectrum of D = I - (I-A)^2
        if isinstance(smoother, CirculantOp) and np.min(d_eigs) > 1e-12:
            quad = 1.0 / d_eigs.reshape(smoother.in_shape) - 1.0
            axes = tuple(range(len(smoother.in_shape)))
            n = smoother.in_size

            def phi(x, sigma=0.0):
                spec = np.fft.fftn(as_array(x), axes=axes)
                return 0.5 * float(np.sum(quad * np.abs(spec) ** 2)) / n

    den = Denoiser(
        fn,
        tag="gs",
        linear=True,
        potential=g_value,
        grad_potential=grad_g,
        prox_potential=phi,
        weight=weight,
    )
    den.grad_lipschitz = lipschitz
    den.smoother = smoother
    return den


def mmse_gmm_denoiser(prior: GmmPrior) -> Denoiser:
    """Exact posterior-mean denoiser under an isotropic Gaussian-mixture prior.

    sigma = 0 returns the input unchanged.  The map is linear only for a
    single zero-mean component, where it reduces to the scalar shrinkage
    gamma^2 / (gamma^2 + sigma^2).
    """
    linear = prior.n_components == 1 and not np.any(prior.means)

    def fn(arr, sigma):
        flat = arr.reshape(-1)
        out = posterior_mean(prior, flat, sigma)
        return np.asarray(out).reshape(arr.shape)

    return Denoiser(fn, tag=f"mmse_gmm(J={prior.n_components})", linear=linear)


# ---------------------------------------------------------------------------
# Finite-difference diagnostics
# ---------------------------------------------------------------------------


def _default_fd_step(x: np.ndarray) -> float:
    return 1e-4 * (1.0 + float(np.max(np.abs(x))))


def _fd_jacobian(apply_fn, x: np.ndarray, fd_step: float) -> np.ndarray:
    """Dense Jacobian by central differences, one column per basis vector."""
    n = x.size
    if n > JACOBIAN_MAX_DIM:
        raise ValueError(f"finite-difference Jacobian capped at {JACOBIAN_MAX_DIM} entries")
    jac = np.empty((n, n))
    e = np.zeros_like(x)
    flat = e.reshape(-1)
    for j in range(n):
        flat[j] = fd_step
        plus = apply_fn(x + e)
        minus = apply_fn(x - e)
        jac[:, j] = (plus - minus).reshape(-1) / (2.0 * fd_step)
        flat[j] = 0.0
    return jac


def estimate_residual_lipschitz(d: Denoiser, sigma: float, shape, probes: int = 3,
                                fd_step: float | None = None, rng: Rng | None = None,
                                power_iters: int = 30000) -> float:
    """Estimated Lipschitz constant of the residual map x - D(x).

    At each probe point the Jacobian of D - id is assembled from central
    finite-difference Jacobian-vector products, and its spectral norm is
    estimated by power iteration on J^T J; the max over probes is returned.
    Exact for linear denoisers up to finite-difference rounding.
    """
    if probes < 1:
        raise ValueError("probes must be >= 1")
    if fd_step is not None and fd_step <= 0:
        raise ValueError("fd_step must be positive")
    rng = rng or Rng(0)
    shape = tuple(int(s) for s in shape)
    worst = 0.0
    for _ in range(probes):
        x = rng.uniform(0.0, 1.0, shape)
        h = fd_step if fd_step is not None else _default_fd_step(x)
        jac = _fd_jacobian(lambda z: d.apply(z, sigma), x, h)
        jac[np.diag_indices_from(jac)] -= 1.0  # Jacobian of D - id
        gram = jac.T @ jac
        v = rng.standard_normal(jac.shape[0])
        v /= np.linalg.norm(v)
        value = 0.0
        for _ in range(power_iters):
            w = gram @ v
            norm = float(np.linalg.norm(w))
            if norm == 0.0:
                value = 0.0
                break
            v = w / norm
            if abs(norm - value) <= 1e-15 * max(norm, 1e-300):
                value = norm
                break
            value = norm
        worst = max(worst, math.sqrt(value))
    return worst


def jacobian_asymmetry(d: Denoiser, x, sigma: float, fd_step: float | None = None) -> float:
    """Relative asymmetry ||J - J^T||_F / ||J||_F of the dense FD Jacobian of D."""
    arr = as_array(x)
    h = fd_step if fd_step is not None else _default_fd_step(arr)
    jac = _fd_jacobian(lambda z: d.apply(z, sigma), arr, h)
    denom = max(float(np.linalg.norm(jac)), 1e-300)
    return float(np.linalg.norm(jac - jac.T)) / denom


def homogeneity_defect(d: Denoiser, x, sigma: float, delta: float = 1e-3) -> float:
    """Local homogeneity defect ||D((1+delta)x) - (1+delta)D(x)|| / (delta*||D(x)||).

    Zero for any linear denoiser; delta = 0 returns 0 by convention.
    """
    if delta == 0.0:
        return 0.0
    arr = as_array(x)
    dx = as_array(d.apply(arr, sigma))
    scaled = as_array(d.apply((1.0 + delta) * arr, sigma))
    num = float(np.linalg.norm(scaled - (1.0 + delta) * dx))
    return num / (abs(delta) * float(np.linalg.norm(dx)) + 1e-300)
