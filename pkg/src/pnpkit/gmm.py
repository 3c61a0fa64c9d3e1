"""Exact Gaussian-mixture machinery: smoothed density, score, posterior mean.

For an isotropic mixture prior, corrupting with N(0, sigma^2 I) noise adds
sigma^2 to each component variance, so the smoothed density, its score, and
the posterior mean (MMSE denoiser) all have closed forms.  Everything is
evaluated in the log domain so small sigma does not underflow.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .core import Rng, Signal, as_array

GMM_MAX_DIM = 64


@dataclass(frozen=True)
class GmmPrior:
    """Isotropic Gaussian mixture: weights (J,), means (J, n), variances (J,)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        variances = np.asarray(self.variances, dtype=np.float64).reshape(-1)
        if means.shape[0] != weights.size or variances.size != weights.size:
            raise ValueError("weights, means, and variances must agree on the component count")
        if np.any(weights <= 0):
            raise ValueError("component weights must be positive")
        if abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError("component weights must sum to 1 within 1e-12")
        if np.any(variances <= 0):
            raise ValueError("component variances must be positive")
        if means.shape[1] > GMM_MAX_DIM:
            raise ValueError(f"mixture dimension capped at {GMM_MAX_DIM}")
        for arr in (weights, means, variances):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.means


def load_gmm_prior(path) -> GmmPrior:
    """Load a prior from JSON {"weights": [...], "means": [[...]], "variances": [...]}."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if set(doc) != {"weights", "means", "variances"}:
        raise ValueError(
            'GMM JSON must have exactly the keys "weights", "means", "variances"'
        )
    return GmmPrior(np.asarray(doc["weights"]), np.asarray(doc["means"]),
                    np.asarray(doc["variances"]))


def _component_logpdfs(prior: GmmPrior, x: np.ndarray, sigma: float) -> np.ndarray:
    s = prior.variances + sigma * sigma
    diff2 = np.sum((x[None, :] - prior.means) ** 2, axis=1)
    return np.log(prior.weights) - 0.5 * prior.dim * np.log(2.0 * math.pi * s) - diff2 / (2.0 * s)


def _as_point(prior: GmmPrior, x) -> np.ndarray:
    arr = as_array(x).reshape(-1)
    if arr.size != prior.dim:
        raise ValueError(f"point has dimension {arr.size}, prior expects {prior.dim}")
    return arr


def smoothed_logpdf(prior: GmmPrior, x, sigma: float) -> float:
    """log p_sigma(x): density of the prior corrupted by N(0, sigma^2 I) noise."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    arr = _as_point(prior, x)
    return float(logsumexp(_component_logpdfs(prior, arr, sigma)))


def _responsibilities(prior: GmmPrior, x: np.ndarray, sigma: float) -> np.ndarray:
    logs = _component_logpdfs(prior, x, sigma)
    logs = logs - logs.max()
    w = np.exp(logs)
    return w / w.sum()


def smoothed_score(prior: GmmPrior, x, sigma: float, allow_unsmoothed: bool = False):
    """Exact gradient of :func:`smoothed_logpdf` with respect to x.

    sigma = 0 is rejected unless ``allow_unsmoothed`` is set, in which case
    the score of the mixture itself is returned.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0 and not allow_unsmoothed:
        raise ValueError("sigma = 0 requires allow_unsmoothed=True")
    arr = _as_point(prior, x)
    r = _responsibilities(prior, arr, sigma)
    s = prior.variances + sigma * sigma
    score = (r / s) @ (prior.means - arr[None, :])
    return Signal.from_array(score) if isinstance(x, Signal) else score


def posterior_mean(prior: GmmPrior, x, sigma: float):
    """Exact conditional mean E[x0 | x0 + sigma*w = x] under the mixture prior.

    Responsibilities are taken under the smoothed mixture; each component
    contributes its conjugate-Gaussian posterior mean.  sigma = 0 returns x
    (identity by convention).
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    arr = _as_point(prior, x)
    if sigma == 0:
        out = arr.copy()
    else:
        r = _responsibilities(prior, arr, sigma)
        s = prior.variances + sigma * sigma
        comp_means = (
            prior.variances[:, None] * arr[None, :] + sigma * sigma * prior.means
        ) / s[:, None]
        out = r @ comp_means
    return Signal.from_array(out) if isinstance(x, Signal) else out


def sample_smoothed(prior: GmmPrior, sigma: float, rng: Rng) -> np.ndarray:
    """One draw from the sigma-smoothed mixture."""
    j = rng.choice(prior.n_components, p=prior.weights)
    std = math.sqrt(float(prior.variances[j]) + sigma * sigma)
    return prior.means[j] + std * rng.standard_normal(prior.dim)


def tweedie_check(prior: GmmPrior, sigma: float, num_points: int, rng: Rng) -> float:
    """Max defect of the identity (posterior mean - x) = sigma^2 * score.

    Points are sampled from the smoothed mixture; both sides are evaluated
    through their independent closed forms.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    worst = 0.0
    for _ in range(num_points):
        x = sample_smoothed(prior, sigma, rng)
        lhs = posterior_mean(prior, x, sigma) - x
        rhs = sigma * sigma * smoothed_score(prior, x, sigma)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst
