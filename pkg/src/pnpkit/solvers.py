"""Deterministic iterative schemes: proximal splittings, RED, GS-PnP.

Every driver accepts a regularization slot that holds either an exact
proximal map or a denoiser, so the plug-and-play variant of each scheme is
the same code path as the classical one.  Drivers return the final iterate
plus a per-iteration :class:`~pnpkit.core.Trace`; stopping is on the step
residual ||x_{k+1} - x_k|| (default 1e-9) or max_iter, and any non-finite
iterate or norm above 1e12 raises :class:`~pnpkit.core.DivergenceError`
carrying the last finite iterate.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import DivergenceError, Signal, SolveError, Trace, as_array, psnr
from .denoisers import Denoiser
from .operators import LinearOp, solve_shifted_normal
from .proximal import ProxMap, prox_quadratic_fidelity

DIVERGENCE_NORM = 1e12


@dataclass
class SolverConfig:
    """Shared solver parameters.

    ``step`` is the scheme's step size (lambda, tau, or eta depending on the
    driver), ``alpha`` the relaxation parameter, ``rho`` the penalty.
    ``record_time`` controls whether wall-clock seconds enter the trace
    (disable it for byte-reproducible outputs).
    """

    step: float = 1.0
    alpha: float = 0.5
    rho: float = 1.0
    max_iter: int = 500
    tol: float = 1e-9
    eval_objective: bool = True
    seed: int = 0
    record_time: bool = True

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be positive")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class SmoothFn:
    """Smooth term: gradient plus optional value / Lipschitz constant."""

    grad: Callable[[np.ndarray], np.ndarray]
    value: Callable[[np.ndarray], float] | None = None
    lipschitz: float | None = None

    @staticmethod
    def least_squares(op: LinearOp, y) -> "SmoothFn":
        y_arr = as_array(y)

        def grad(x):
            return op._adjoint(op._apply(x) - y_arr)

        def value(x):
            return 0.5 * float(np.sum((op._apply(x) - y_arr) ** 2))

        lip = None
        if hasattr(op, "spectral_norm"):
            lip = float(op.spectral_norm) ** 2
        return SmoothFn(grad=grad, value=value, lipschitz=lip)


def _as_smooth(obj) -> SmoothFn:
    if isinstance(obj, SmoothFn):
        return obj
    return SmoothFn(grad=obj)


@dataclass(frozen=True)
class RegSlot:
    """Regularization slot: exactly one of an exact prox or a denoiser.

    For a prox slot, ``apply(v, scale)`` evaluates prox_{scale*weight*g};
    the denoiser slot applies D_sigma and ignores the scale, which is the
    plug-and-play substitution.  ``reg_value`` evaluates the regularization
    term of the objective the scheme targets, when that is known (prox
    objective, or the denoiser's exact proximal potential divided by the
    scale).
    """

    prox: ProxMap | None = None
    denoiser: Denoiser | None = None
    weight: float = 1.0
    sigma: float = 0.0

    def __post_init__(self):
        if (self.prox is None) == (self.denoiser is None):
            raise ValueError("exactly one of prox/denoiser must be set")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    def apply(self, v: np.ndarray, scale: float) -> np.ndarray:
        if self.prox is not None:
            return as_array(self.prox.evaluate(v, scale * self.weight))
        return as_array(self.denoiser.apply(v, self.sigma))

    def reg_value(self, x: np.ndarray, scale: float) -> float | None:
        if self.prox is not None:
            if self.prox.objective is None:
                return None
            return self.weight * float(self.prox.objective(x))
        if self.denoiser.prox_potential is not None:
            return float(self.denoiser.prox_potential(x, self.sigma)) / scale
        return None


def as_slot(obj, weight: float = 1.0, sigma: float = 0.0) -> RegSlot:
    if isinstance(obj, RegSlot):
        return obj
    if isinstance(obj, ProxMap):
        return RegSlot(prox=obj, weight=weight)
    if isinstance(obj, Denoiser):
        return RegSlot(denoiser=obj, sigma=sigma)
    raise TypeError(f"cannot build a RegSlot from {type(obj).__name__}")


@dataclass(frozen=True)
class FixedPointProblem:
    """A fixed-point operator x -> T(x) assembled from fidelity and reg slot."""

    operator: Callable[[np.ndarray], np.ndarray]
    tag: str = "T"


class _Run:
    """Trace bookkeeping shared by the drivers."""

    def __init__(self, cfg: SolverConfig, reference=None, peak: float = 1.0):
        self.cfg = cfg
        self.trace = Trace()
        self.reference = None if reference is None else as_array(reference)
        self.peak = peak
        self._t0 = time.perf_counter()

    def _seconds(self) -> float:
        return (time.perf_counter() - self._t0) if self.cfg.record_time else math.nan

    def _psnr(self, x: np.ndarray) -> float:
        if self.reference is None:
            return math.nan
        return psnr(x, self.reference, self.peak)

    def row(self, k: int, x: np.ndarray, objective: float = math.nan,
            step_residual: float = math.nan, fp_residual: float = math.nan):
        self.trace.append(k, objective, step_residual, fp_residual,
                          self._psnr(x), self._seconds())

    def check(self, x: np.ndarray, k: int, last: np.ndarray):
        if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > DIVERGENCE_NORM:
            raise DivergenceError(
                f"iterates diverged at step {k}", last=Signal.from_array(last),
                step=k, trace=self.trace,
            )

    def finish(self, x: np.ndarray, reason: str) -> tuple[Signal, Trace]:
        self.trace.stop_reason = reason
        return Signal.from_array(x), self.trace


def _objective(run: _Run, f: SmoothFn | None, slot: RegSlot | None, x: np.ndarray,
               scale: float) -> float:
    if not run.cfg.eval_objective:
        return math.nan
    total = 0.0
    if f is not None:
        if f.value is None:
            return math.nan
        total += float(f.value(x))
    if slot is not None:
        reg = slot.reg_value(x, scale)
        if reg is None:
            return math.nan
        total += reg
    return total


# ---------------------------------------------------------------------------
# Proximal gradient descent and relatives
# ---------------------------------------------------------------------------


def run_pgd(grad_f, reg, cfg: SolverConfig, x0, reference=None, peak: float = 1.0):
    """Proximal gradient descent x_{k+1} = reg(x_k - step * grad f(x_k)).

    With an exact prox in the slot this is classical PGD; with a denoiser it
    is the plug-and-play substitution of the same iteration.
    """
    f = _as_smooth(grad_f)
    slot = as_slot(reg)
    x = as_array(x0).copy()
    run = _Run(cfg, reference, peak)
    run.row(0, x, objective=_objective(run, f, slot, x, cfg.step))
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        v = x - cfg.step * f.grad(x)
        x_new = slot.apply(v, cfg.step)
        run.check(x_new, k, x)
        r = float(np.linalg.norm(x_new - x))
        run.row(k, x_new, objective=_objective(run, f, slot, x_new, cfg.step),
                step_residual=r, fp_residual=r)
        x = x_new
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x, reason)


def run_pgd_preconditioned(grad_f, reg: ProxMap, precond, cfg: SolverConfig, x0,
                           reference=None, peak: float = 1.0):
    """Fixed-preconditioner proximal gradient with a diagonal metric B.

    x_{k+1} = prox_g^B(x_k - B^{-1} grad f(x_k)), where the scaled prox under
    a diagonal B is the componentwise prox with lam_i = 1/B_i; this requires
    a separable g (l1, box, quadratic), otherwise the prox raises.
    """
    f = _as_smooth(grad_f)
    b = as_array(precond)
    if np.any(b <= 0):
        raise ValueError("preconditioner entries must be positive")
    inv_b = 1.0 / b
    x = as_array(x0).copy()
    if x.shape != b.shape:
        raise ValueError("preconditioner shape must match the iterate")
    run = _Run(cfg, reference, peak)
    slot = as_slot(reg)
    run.row(0, x, objective=_objective(run, f, slot, x, 1.0))
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        v = x - inv_b * f.grad(x)
        x_new = as_array(reg.evaluate_scaled(v, inv_b))
        run.check(x_new, k, x)
        r = float(np.linalg.norm(x_new - x))
        run.row(k, x_new, objective=_objective(run, f, slot, x_new, 1.0),
                step_residual=r, fp_residual=r)
        x = x_new
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x, reason)


def run_apgd(grad_f, reg, cfg: SolverConfig, x0, y0=None, reference=None,
             peak: float = 1.0):
    """Relaxed proximal gradient (alpha-PGD), three-line form.

        q_{k+1} = (1-alpha) x_k + alpha y_k
        y_{k+1} = reg(y_k - step * grad f(q_{k+1}))
        x_{k+1} = (1-alpha) x_k + alpha y_{k+1}

    The Lyapunov value F(x_k) + (alpha/2)(1 - 1/alpha)^2 ||x_k - x_{k-1}||^2
    is reconstructable from the trace as
    objective + (alpha/2)(1-1/alpha)^2 * step_residual^2.
    """
    f = _as_smooth(grad_f)
    slot = as_slot(reg)
    alpha = cfg.alpha
    x = as_array(x0).copy()
    y = x.copy() if y0 is None else as_array(y0).copy()
    run = _Run(cfg, reference, peak)
    run.row(0, x, objective=_objective(run, f, slot, x, cfg.step))
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        q = (1.0 - alpha) * x + alpha * y
        y = slot.apply(y - cfg.step * f.grad(q), cfg.step)
        x_new = (1.0 - alpha) * x + alpha * y
        run.check(x_new, k, x)
        r = float(np.linalg.norm(x_new - x))
        run.row(k, x_new, objective=_objective(run, f, slot, x_new, cfg.step),
                step_residual=r, fp_residual=r)
        x = x_new
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x, reason)


# ---------------------------------------------------------------------------
# Douglas-Rachford splitting and ADMM
# ---------------------------------------------------------------------------


def run_drs(map_a, map_b, cfg: SolverConfig, x0, reference=None, peak: float = 1.0):
    """Douglas-Rachford iteration with two resolvent slots.

        y_{k+1} = A(x_k)
        z_{k+1} = B(2 y_{k+1} - x_k)
        x_{k+1} = x_k + z_{k+1} - y_{k+1}

    With A = prox of the first term and B of the second this is classical
    DRS; putting the denoiser in the A slot gives the denoiser-first
    variant, putting it in the B slot (after a differentiable fidelity
    prox) gives the fidelity-first variant.  The returned point is the
    limit of the y-sequence.  The traced fixed-point residual is
    ||z_k - y_k|| = ||x_{k+1} - x_k||, the update's own residual.
    """
    slot_a = as_slot(map_a)
    slot_b = as_slot(map_b)
    lam = cfg.step
    x = as_array(x0).copy()
    run = _Run(cfg, reference, peak)

    def objective_at(point):
        if not run.cfg.eval_objective:
            return math.nan
        va = slot_a.reg_value(point, lam)
        vb = slot_b.reg_value(point, lam)
        if va is None or vb is None:
            return math.nan
        return va + vb

    run.row(0, x, objective=objective_at(x))
    y = x
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        y = slot_a.apply(x, lam)
        z = slot_b.apply(2.0 * y - x, lam)
        x_new = x + z - y
        run.check(x_new, k, x)
        r = float(np.linalg.norm(x_new - x))
        run.row(k, y, objective=objective_at(y), step_residual=r, fp_residual=r)
        x = x_new
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(y, reason)


def run_admm(op: LinearOp, y, reg, cfg: SolverConfig, x0=None, z0=None, u0=None,
             reference=None, peak: float = 1.0):
    """ADMM for 0.5*||Kx - y||^2 + g(z) subject to x = z.

        x_{k+1} = (K^T K + rho I)^{-1} (K^T y + rho (z_k - u_k))
        z_{k+1} = reg(x_{k+1} + u_k)        (prox_{g/rho}, or the denoiser)
        u_{k+1} = u_k + x_{k+1} - z_{k+1}

    The x-update is exact through the shifted normal equations.  The traced
    fixed-point residual is the primal residual ||x_k - z_k||.
    """
    y_arr = as_array(y)
    slot = as_slot(reg)
    rho = cfg.rho
    kty = op._adjoint(y_arr)
    x = kty.copy() if x0 is None else as_array(x0).copy()
    z = x.copy() if z0 is None else as_array(z0).copy()
    u = np.zeros_like(x) if u0 is None else as_array(u0).copy()
    fid = SmoothFn.least_squares(op, y_arr)
    run = _Run(cfg, reference, peak)
    run.row(0, x, objective=_objective(run, fid, slot, x, 1.0 / rho))
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        x_new = as_array(solve_shifted_normal(op, rho, kty + rho * (z - u)))
        z = slot.apply(x_new + u, 1.0 / rho)
        u = u + x_new - z
        run.check(x_new, k, x)
        r = float(np.linalg.norm(x_new - x))
        primal = float(np.linalg.norm(x_new - z))
        run.row(k, x_new, objective=_objective(run, fid, slot, x_new, 1.0 / rho),
                step_residual=r, fp_residual=primal)
        x = x_new
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x, reason)


def _as_schedule(value, default: float):
    if value is None:
        return lambda k: default
    if np.isscalar(value):
        return lambda k: float(value)
    if callable(value):
        return lambda k: float(value(k))
    seq = [float(v) for v in value]
    return lambda k: seq[min(k - 1, len(seq) - 1)]


def run_hqs(op: LinearOp, y, reg, cfg: SolverConfig, x0=None, rho_schedule=None,
            sigma_schedule=None, reference=None, peak: float = 1.0):
    """Half-quadratic splitting, the (possibly non-convergent) baseline.

        x_{k+1} = prox_{f/rho_k}(z_k)   with f = 0.5*||K. - y||^2
        z_{k+1} = reg(x_{k+1})          (prox_{g/rho_k}, or D_{sigma_k})

    Supports rho and sigma schedules (constant, sequence, or callable); a
    decreasing-sigma denoiser schedule mimics the classical non-convergent
    baseline.  Divergence is recorded in the trace, not raised.
    """
    y_arr = as_array(y)
    slot = as_slot(reg)
    rho_of = _as_schedule(rho_schedule, cfg.rho)
    sigma_of = _as_schedule(sigma_schedule, slot.sigma)
    z = op._adjoint(y_arr) if x0 is None else as_array(x0).copy()
    fid = SmoothFn.least_squares(op, y_arr)
    run = _Run(cfg, reference, peak)
    run.row(0, z, objective=_objective(run, fid, slot, z, 1.0 / rho_of(1)))
    reason = "max_iter"
    try:
        for k in range(1, cfg.max_iter + 1):
            rho = rho_of(k)
            x = as_array(prox_quadratic_fidelity(z, 1.0 / rho, op, y_arr))
            if slot.denoiser is not None:
                z_new = as_array(slot.denoiser.apply(x, sigma_of(k)))
            else:
                z_new = slot.apply(x, 1.0 / rho)
            run.check(z_new, k, z)
            r = float(np.linalg.norm(z_new - z))
            run.row(k, z_new, objective=_objective(run, fid, slot, z_new, 1.0 / rho),
                    step_residual=r, fp_residual=r)
            z = z_new
            if r <= cfg.tol:
                reason = "tolerance"
                break
    except DivergenceError as exc:
        reason = "diverged"
        if exc.last is not None:
            z = as_array(exc.last)
    return run.finish(z, reason)


# ---------------------------------------------------------------------------
# RED schemes
# ---------------------------------------------------------------------------


def _red_fixed_point_norm(op: LinearOp, y_arr, x, dx, weight: float) -> float:
    return float(np.linalg.norm(op._adjoint(op._apply(x) - y_arr) + weight * (x - dx)))


def run_red_gd(op: LinearOp, y, denoiser: Denoiser, lam: float, sigma: float,
               eta: float, cfg: SolverConfig, x0=None, reference=None,
               peak: float = 1.0):
    """Gradient-descent RED.

        x_{k+1} = x_k - eta * [K^T(K x_k - y) + (lam/sigma^2)(x_k - D(x_k))]

    The traced fixed-point residual is the norm of the bracket, i.e. the
    stationarity condition the scheme aims to null (with the effective
    weight lam/sigma^2).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    y_arr = as_array(y)
    weight = lam / (sigma * sigma)
    x = op._adjoint(y_arr) if x0 is None else as_array(x0).copy()
    run = _Run(cfg, reference, peak)
    dx = as_array(denoiser.apply(x, sigma))
    fc = op._adjoint(op._apply(x) - y_arr) + weight * (x - dx)
    run.row(0, x, fp_residual=float(np.linalg.norm(fc)))
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        x_new = x - eta * fc
        run.check(x_new, k, x)
        dx = as_array(denoiser.apply(x_new, sigma))
        fc = op._adjoint(op._apply(x_new) - y_arr) + weight * (x_new - dx)
        r = float(np.linalg.norm(x_new - x))
        run.row(k, x_new, step_residual=r, fp_residual=float(np.linalg.norm(fc)))
        x = x_new
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x, reason)


def run_red_pg(op: LinearOp, y, denoiser: Denoiser, lam: float, L: float,
               cfg: SolverConfig, v0=None, sigma: float = 0.0, reference=None,
               peak: float = 1.0):
    """Proximal-gradient RED, the provably convergent fixed-point scheme.

        x_k = argmin_x f(x) + (lam*L/2) ||x - v_{k-1}||^2
        v_k = (1/L) D(x_k) - ((1 - L)/L) x_k

    Requires L > 1 (the averagedness condition).  The traced fixed-point
    residual is ||K^T(K x - y) + lam (x - D(x))||.
    """
    if L <= 1:
        raise ValueError("L must exceed 1")
    y_arr = as_array(y)
    v = op._adjoint(y_arr) if v0 is None else as_array(v0).copy()
    run = _Run(cfg, reference, peak)
    dv = as_array(denoiser.apply(v, sigma))
    run.row(0, v, fp_residual=_red_fixed_point_norm(op, y_arr, v, dv, lam))
    x_prev = v
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        x = as_array(prox_quadratic_fidelity(v, 1.0 / (lam * L), op, y_arr))
        run.check(x, k, x_prev)
        dx = as_array(denoiser.apply(x, sigma))
        v = (1.0 / L) * dx - ((1.0 - L) / L) * x
        r = float(np.linalg.norm(x - x_prev))
        run.row(k, x, step_residual=r,
                fp_residual=_red_fixed_point_norm(op, y_arr, x, dx, lam))
        x_prev = x
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x_prev, reason)


def nesterov_t_sequence(count: int) -> np.ndarray:
    """t_0 = 1, t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2."""
    t = np.empty(count)
    if count == 0:
        return t
    t[0] = 1.0
    for k in range(1, count):
        t[k] = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t[k - 1] ** 2))
    return t


def run_red_apg(op: LinearOp, y, denoiser: Denoiser, lam: float, L: float,
                cfg: SolverConfig, v0=None, sigma: float = 0.0, reference=None,
                peak: float = 1.0):
    """Momentum-accelerated RED (trace only; convergence is not asserted).

        x_k = argmin_x f(x) + (lam*L/2) ||x - v_{k-1}||^2
        t_k = (1 + sqrt(1 + 4 t_{k-1}^2)) / 2
        z_k = x_k + ((t_{k-1} - 1)/t_k) (x_k - x_{k-1})
        v_k = (1/L) D(x_k) - ((1 - L)/L) z_k

    Divergence is recorded in the trace rather than raised.
    """
    if L <= 1:
        raise ValueError("L must exceed 1")
    y_arr = as_array(y)
    v = op._adjoint(y_arr) if v0 is None else as_array(v0).copy()
    run = _Run(cfg, reference, peak)
    dv = as_array(denoiser.apply(v, sigma))
    run.row(0, v, fp_residual=_red_fixed_point_norm(op, y_arr, v, dv, lam))
    x_prev = None
    t_prev = 1.0
    x = v
    reason = "max_iter"
    try:
        for k in range(1, cfg.max_iter + 1):
            x = as_array(prox_quadratic_fidelity(v, 1.0 / (lam * L), op, y_arr))
            run.check(x, k, x_prev if x_prev is not None else v)
            t = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev * t_prev))
            momentum = (t_prev - 1.0) / t
            z = x if x_prev is None else x + momentum * (x - x_prev)
            dx = as_array(denoiser.apply(x, sigma))
            v = (1.0 / L) * dx - ((1.0 - L) / L) * z
            r = math.nan if x_prev is None else float(np.linalg.norm(x - x_prev))
            run.row(k, x, step_residual=r,
                    fp_residual=_red_fixed_point_norm(op, y_arr, x, dx, lam))
            if x_prev is not None and r <= cfg.tol:
                x_prev = x
                reason = "tolerance"
                break
            x_prev = x
            t_prev = t
    except DivergenceError as exc:
        reason = "diverged"
        if exc.last is not None:
            x = as_array(exc.last)
        return run.finish(x, reason)
    return run.finish(x_prev if x_prev is not None else x, reason)


# ---------------------------------------------------------------------------
# GS-PnP with optional backtracking
# ---------------------------------------------------------------------------


def run_gs_pnp(op: LinearOp, y, gs: Denoiser, cfg: SolverConfig, lam: float | None = None,
               tau: float | None = None, backtracking: bool = False, x0=None,
               reference=None, peak: float = 1.0, max_halvings: int = 60):
    """Prox-on-fidelity scheme for gradient-step denoisers.

        x_{k+1} = prox_{t f}(x_k - t * lam * grad g(x_k)),  f = 0.5*||K. - y||^2

    Evaluates F = f + lam*g every iteration (g is the denoiser's exposed
    potential).  Without backtracking the step is t = tau throughout; with
    backtracking the trial step is halved (at most ``max_halvings`` times,
    so down to 2^-60 * tau by default) until

        F(x_k) - F(x_{k+1}) >= (1/t) ||x_{k+1} - x_k||^2,

    and exhaustion raises SolveError reporting the last objective values.
    The test carries a 1e-12 relative slack so that rounding noise near
    convergence cannot stall the search.
    """
    if gs.potential is None or gs.grad_potential is None:
        raise ValueError("run_gs_pnp needs a gradient-step denoiser exposing its potential")
    y_arr = as_array(y)
    lam = (gs.weight if gs.weight is not None else 1.0) if lam is None else lam
    tau = cfg.step if tau is None else tau
    if lam <= 0 or tau <= 0:
        raise ValueError("lam and tau must be positive")

    def full_objective(x):
        fid = 0.5 * float(np.sum((op._apply(x) - y_arr) ** 2))
        return fid + lam * float(gs.potential(x, 0.0))

    x = op._adjoint(y_arr) if x0 is None else as_array(x0).copy()
    fx = full_objective(x)
    run = _Run(cfg, reference, peak)
    run.row(0, x, objective=fx)
    reason = "max_iter"
    for k in range(1, cfg.max_iter + 1):
        grad = as_array(gs.grad_potential(x, 0.0))
        if backtracking:
            t = tau
            accepted = False
            cand, f_cand = x, fx
            slack = 1e-12 * max(1.0, abs(fx))
            for _ in range(max_halvings + 1):
                cand = as_array(prox_quadratic_fidelity(x - t * lam * grad, t, op, y_arr))
                f_cand = full_objective(cand)
                if fx - f_cand >= (1.0 / t) * float(np.sum((cand - x) ** 2)) - slack:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                raise SolveError(
                    f"backtracking exhausted {max_halvings} halvings at iteration {k}: "
                    f"F(x) = {fx:.12g}, last trial F = {f_cand:.12g}"
                )
        else:
            cand = as_array(prox_quadratic_fidelity(x - tau * lam * grad, tau, op, y_arr))
            f_cand = full_objective(cand)
        run.check(cand, k, x)
        r = float(np.linalg.norm(cand - x))
        run.row(k, cand, objective=f_cand, step_residual=r, fp_residual=r)
        x, fx = cand, f_cand
        if r <= cfg.tol:
            reason = "tolerance"
            break
    return run.finish(x, reason)


# ---------------------------------------------------------------------------
# Generic fixed-point driver
# ---------------------------------------------------------------------------


def drsdiff_operator(prox_f: ProxMap, denoiser: Denoiser, tau: float,
                     sigma: float = 0.0) -> FixedPointProblem:
    """Fidelity-first DRS as a single operator.

    T = 0.5*id + 0.5*(2D - id)(2 prox_{tau f} - id); iterating T reproduces
    the three-line fidelity-first DRS updates exactly.
    """

    def operator(x):
        yk = as_array(prox_f.evaluate(x, tau))
        reflected = 2.0 * yk - x
        zk = as_array(denoiser.apply(reflected, sigma))
        return 0.5 * x + 0.5 * (2.0 * zk - reflected)

    return FixedPointProblem(operator=operator, tag="drsdiff")


def run_fixed_point(problem, cfg: SolverConfig, x0, reference=None, peak: float = 1.0):
    """Iterate x_{k+1} = T(x_k) and estimate the empirical contraction factor.

    The factor is sup_k ||x_{k+1} - x*|| / ||x_k - x*|| against the final
    iterate as the x* proxy, excluding the last 5 iterations (whose ratios
    are dominated by the proxy error).  Returns (x, trace, factor); raises
    SolveError carrying the factor when max_iter is hit before the step
    residual reaches tolerance.
    """
    operator = problem.operator if isinstance(problem, FixedPointProblem) else problem
    x = as_array(x0).copy()
    run = _Run(cfg, reference, peak)
    run.row(0, x)
    iterates = [x.copy()]
    converged = False
    for k in range(1, cfg.max_iter + 1):
        x_new = as_array(operator(x))
        run.check(x_new, k, x)
        r = float(np.linalg.norm(x_new - x))
        run.row(k, x_new, step_residual=r, fp_residual=r)
        iterates.append(x_new.copy())
        x = x_new
        if r <= cfg.tol:
            converged = True
            break

    star = iterates[-1]
    dists = [float(np.linalg.norm(it - star)) for it in iterates]
    factor = 0.0
    usable = len(dists) - 1 - 5  # drop ratios from the last 5 iterations
    scale = max(dists[0], 1.0)
    for k in range(max(usable, 0)):
        if dists[k] > 1e-14 * scale:
            factor = max(factor, dists[k + 1] / dists[k])
    if not converged:
        raise SolveError("fixed-point iteration did not converge", residual=factor)
    run.trace.stop_reason = "tolerance"
    return Signal.from_array(x), run.trace, factor
