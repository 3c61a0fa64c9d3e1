import json
import math

import numpy as np
import pytest
from scipy.integrate import quad

from pnpkit import (
    GmmPrior,
    Rng,
    load_gmm_prior,
    posterior_mean,
    smoothed_logpdf,
    smoothed_score,
    tweedie_check,
)


def quad_smoothed_pdf(prior, z, sigma):
    """Numerical integration of the 1-D noisy marginal, the independent oracle."""

    def clean_pdf(x):
        total = 0.0
        for w, m, v in zip(prior.weights, prior.means[:, 0], prior.variances):
            total += w * math.exp(-((x - m) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
        return total

    def integrand(x):
        cond = math.exp(-((z - x) ** 2) / (2 * sigma**2)) / math.sqrt(2 * math.pi * sigma**2)
        return cond * clean_pdf(x)

    val, _ = quad(integrand, -40, 40, epsabs=1e-13, epsrel=1e-13, limit=400)
    return val


def quad_posterior_mean(prior, z, sigma):
    def clean_pdf(x):
        total = 0.0
        for w, m, v in zip(prior.weights, prior.means[:, 0], prior.variances):
            total += w * math.exp(-((x - m) ** 2) / (2 * v)) / math.sqrt(2 * math.pi * v)
        return total

    def cond(x):
        return math.exp(-((z - x) ** 2) / (2 * sigma**2)) / math.sqrt(2 * math.pi * sigma**2)

    num, _ = quad(lambda x: x * cond(x) * clean_pdf(x), -40, 40,
                  epsabs=1e-13, epsrel=1e-13, limit=400)
    den, _ = quad(lambda x: cond(x) * clean_pdf(x), -40, 40,
                  epsabs=1e-13, epsrel=1e-13, limit=400)
    return num / den


@pytest.fixture
def two_component():
    return GmmPrior([0.4, 0.6], [[-1.5], [2.0]], [0.5, 1.3])


class TestPriorValidation:
    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            GmmPrior([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0])

    def test_weights_positive(self):
        with pytest.raises(ValueError):
            GmmPrior([1.2, -0.2], [[0.0], [1.0]], [1.0, 1.0])

    def test_variances_positive(self):
        with pytest.raises(ValueError):
            GmmPrior([1.0], [[0.0]], [0.0])

    def test_dimension_cap(self):
        with pytest.raises(ValueError):
            GmmPrior([1.0], [np.zeros(65)], [1.0])

    def test_json_roundtrip(self, tmp_path):
        doc = {"weights": [0.3, 0.7], "means": [[0.0, 1.0], [2.0, -1.0]],
               "variances": [0.5, 1.5]}
        path = tmp_path / "prior.json"
        path.write_text(json.dumps(doc))
        prior = load_gmm_prior(path)
        assert prior.dim == 2
        np.testing.assert_allclose(prior.weights, [0.3, 0.7])

    def test_json_rejects_extra_keys(self, tmp_path):
        path = tmp_path / "prior.json"
        path.write_text(json.dumps({"weights": [1.0], "means": [[0.0]],
                                    "variances": [1.0], "extra": 1}))
        with pytest.raises(ValueError):
            load_gmm_prior(path)


class TestSmoothedLogpdf:
    def test_standard_normal_at_zero(self):
        prior = GmmPrior([1.0], [[0.0]], [1.0])
        assert smoothed_logpdf(prior, [0.0], 0.0) == pytest.approx(
            math.log(1.0 / math.sqrt(2 * math.pi)), abs=1e-14
        )

    def test_variance_addition(self):
        # N(0,1) smoothed by sigma=1 is N(0,2)
        prior = GmmPrior([1.0], [[0.0]], [1.0])
        expected = -0.5 * math.log(2 * math.pi * 2.0)
        assert smoothed_logpdf(prior, [0.0], 1.0) == pytest.approx(expected, abs=1e-14)

    def test_vs_quadrature_oracle(self, two_component):
        for z in (-2.0, 0.3, 2.5):
            for sigma in (0.4, 1.0):
                ours = smoothed_logpdf(two_component, [z], sigma)
                oracle = math.log(quad_smoothed_pdf(two_component, z, sigma))
                assert abs(ours - oracle) <= 1e-10

    def test_negative_sigma_rejected(self, two_component):
        with pytest.raises(ValueError):
            smoothed_logpdf(two_component, [0.0], -1.0)


class TestSmoothedScore:
    def test_single_gaussian_closed_form(self):
        prior = GmmPrior([1.0], [[0.0, 0.0]], [0.7])
        x = np.array([1.5, -2.0])
        sigma = 0.9
        expected = -x / (0.7 + sigma**2)
        np.testing.assert_allclose(smoothed_score(prior, x, sigma), expected, atol=1e-13)

    def test_vs_finite_differences(self, two_component):
        x = np.array([0.8])
        sigma = 0.6
        score = smoothed_score(two_component, x, sigma)[0]
        h = 1e-6
        fd = (smoothed_logpdf(two_component, x + h, sigma)
              - smoothed_logpdf(two_component, x - h, sigma)) / (2 * h)
        assert abs(score - fd) <= 1e-6 * max(abs(fd), 1.0)

    def test_symmetric_mixture_midpoint(self):
        prior = GmmPrior([0.5, 0.5], [[-1.0], [1.0]], [0.4, 0.4])
        assert abs(smoothed_score(prior, [0.0], 0.5)[0]) <= 1e-14

    def test_sigma_zero_needs_flag(self, two_component):
        with pytest.raises(ValueError):
            smoothed_score(two_component, [0.0], 0.0)
        val = smoothed_score(two_component, [0.0], 0.0, allow_unsmoothed=True)
        assert np.all(np.isfinite(val))


class TestPosteriorMean:
    def test_single_component_shrinkage(self):
        # gamma^2 x / (gamma^2 + sigma^2) with gamma = sigma = 1 halves the input
        prior = GmmPrior([1.0], [[0.0, 0.0]], [1.0])
        out = posterior_mean(prior, np.array([2.0, 0.0]), 1.0)
        np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-14)

    def test_sigma_zero_identity(self, two_component):
        x = np.array([0.123])
        np.testing.assert_array_equal(posterior_mean(two_component, x, 0.0), x)

    def test_large_sigma_approaches_prior_mean(self, two_component):
        out = posterior_mean(two_component, np.array([5.0]), 1e6)
        assert out[0] == pytest.approx(float(two_component.mean[0]), abs=1e-6)

    def test_vs_quadrature_oracle(self, two_component):
        for z in (-1.0, 0.5, 3.0):
            ours = posterior_mean(two_component, [z], 0.8)[0]
            oracle = quad_posterior_mean(two_component, z, 0.8)
            assert abs(ours - oracle) <= 1e-8


class TestTweedie:
    def test_single_gaussian_exact(self):
        prior = GmmPrior([1.0], [[0.0, 0.0, 0.0]], [2.0])
        assert tweedie_check(prior, 1.0, 50, Rng(0)) <= 1e-12

    def test_three_component_2d(self):
        prior = GmmPrior([0.2, 0.5, 0.3], [[0.0, 0.0], [1.0, -1.0], [-2.0, 0.5]],
                         [0.3, 1.0, 2.0])
        assert tweedie_check(prior, 0.7, 100, Rng(1)) <= 1e-8

    def test_heavy_smoothing(self):
        prior = GmmPrior([0.5, 0.5], [[-1.0], [1.0]], [0.4, 0.9])
        assert tweedie_check(prior, 10.0, 100, Rng(2)) <= 1e-8

    def test_small_sigma_denoiser_near_identity_at_modes(self):
        prior = GmmPrior([0.5, 0.5], [[-1.0], [1.0]], [0.2, 0.2])
        sigma = 1e-4
        rng = Rng(3)
        for _ in range(20):
            mode = prior.means[rng.choice(2, p=prior.weights)]
            x = mode + 0.05 * rng.standard_normal(1)
            out = posterior_mean(prior, x, sigma)
            assert np.max(np.abs(out - x)) <= 1e-3
