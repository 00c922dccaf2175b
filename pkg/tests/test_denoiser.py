"""Mixture-oracle posterior checks against independent numeric estimates."""
import threading

import numpy as np
import pytest

from trafficdiff.denoiser import (
    DenoiserContext,
    MixtureScenePrior,
    OracleDenoiser,
    StubDenoiser,
    mixture_posterior,
)
from trafficdiff.diffusion import SIGMA_FLOOR, schedule
from trafficdiff.scene_tensor import InpaintingSpec

from support import is_posterior_mean


def _scalar_prior(weights, means, variances):
    # wrap scalars as [K,1,1,1] scene tensors
    K = len(weights)
    return MixtureScenePrior(
        weights=np.asarray(weights, dtype=np.float64),
        means=np.asarray(means, dtype=np.float64).reshape(K, 1, 1, 1),
        variances=np.asarray(variances, dtype=np.float64).reshape(K, 1, 1, 1),
    )


def _random_prior(rng, K, shape):
    w = rng.dirichlet(np.ones(K) * 2.0)
    mu = rng.normal(0.0, 1.5, size=(K,) + shape)
    var = rng.uniform(0.2, 1.5, size=(K,) + shape)
    return MixtureScenePrior(weights=w, means=mu, variances=var)


class TestSingleComponent:
    def test_matches_gaussian_conditioning(self):
        # K=1 reduces to the textbook joint-Gaussian update; hand formula here
        prior = _scalar_prior([1.0], [0.7], [0.9])
        t = 0.6
        alpha, sigma = schedule(np.asarray(t))
        z = np.full((1, 1, 1), 0.3)
        resp, xhat = mixture_posterior(prior, z, t)
        assert resp.shape == (1,)
        assert resp[0] == pytest.approx(1.0)
        gain = alpha * 0.9 / (alpha**2 * 0.9 + sigma**2)
        want = 0.7 + gain * (0.3 - alpha * 0.7)
        assert xhat[0, 0, 0] == pytest.approx(float(want), abs=1e-12)


class TestScalarTwoComponent:
    def test_matches_grid_integration(self):
        # numeric quadrature over x: no affine shortcut anywhere in the oracle
        prior = _scalar_prior([0.35, 0.65], [-1.2, 1.8], [0.5, 0.8])
        t = 0.45
        alpha, sigma = schedule(np.asarray(t))
        alpha, sigma = float(alpha), float(sigma)
        for zval in (-0.8, 0.0, 1.1):
            z = np.full((1, 1, 1), zval)
            _, xhat = mixture_posterior(prior, z, t)
            xs = np.linspace(-12.0, 12.0, 200_001)
            px = np.zeros_like(xs)
            for w, mu, var in [(0.35, -1.2, 0.5), (0.65, 1.8, 0.8)]:
                px += (
                    w
                    * np.exp(-0.5 * (xs - mu) ** 2 / var)
                    / np.sqrt(2 * np.pi * var)
                )
            lik = np.exp(-0.5 * (zval - alpha * xs) ** 2 / sigma**2)
            post = px * lik
            want = (xs * post).sum() / post.sum()
            assert xhat[0, 0, 0] == pytest.approx(want, abs=1e-6)

    def test_responsibilities_sum_to_one(self):
        rng = np.random.default_rng(3)
        prior = _random_prior(rng, 4, (1, 1, 1))
        z = np.asarray(rng.normal(size=(1, 1, 1)))
        resp, _ = mixture_posterior(prior, z, 0.7)
        assert resp.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(resp >= 0.0)


class TestImportanceSamplingAgreement:
    """The closed form must agree with a brute-force posterior estimate."""

    def test_scalar_cases(self):
        rng = np.random.default_rng(11)
        for case in range(6):
            K = int(rng.integers(2, 4))
            prior = _random_prior(rng, K, (1, 1, 1))
            t = float(rng.uniform(0.35, 0.9))
            z = np.asarray(prior.sample(rng), dtype=np.float64)
            alpha, sigma = schedule(np.asarray(t))
            z = float(alpha) * z + float(sigma) * rng.standard_normal(z.shape)
            _, xhat = mixture_posterior(prior, z, t)
            est, se, ess = is_posterior_mean(prior, z, t, 200_000, rng)
            assert ess > 1_000, f"case {case}: degenerate IS weights"
            assert abs(est[0, 0, 0] - xhat[0, 0, 0]) <= 3 * max(se[0, 0, 0], 1e-9)

    def test_tensor_case(self):
        rng = np.random.default_rng(12)
        prior = _random_prior(rng, 3, (2, 2, 2))
        t = 0.65
        alpha, sigma = schedule(np.asarray(t))
        x = prior.sample(rng)
        z = float(alpha) * x + float(sigma) * rng.standard_normal(x.shape)
        _, xhat = mixture_posterior(prior, z, t)
        est, se, ess = is_posterior_mean(prior, z, t, 400_000, rng)
        assert ess > 500
        assert np.all(np.abs(est - xhat) <= 3 * np.maximum(se, 1e-9))


class TestInpaintingConditioning:
    def test_pinned_entries_returned_exactly(self):
        rng = np.random.default_rng(21)
        prior = _random_prior(rng, 3, (2, 3, 2))
        mask = np.zeros((2, 3, 2), dtype=bool)
        mask[0, :2, :] = True
        values = np.where(mask, rng.normal(size=mask.shape), 0.0)
        spec = InpaintingSpec(values=values, mask=mask)
        z = rng.normal(size=(2, 3, 2))
        _, xhat = mixture_posterior(prior, z, 0.5, inpainting=spec)
        np.testing.assert_array_equal(xhat[mask], values[mask])

    def test_responsibilities_use_prior_density_at_pins(self):
        # independent enumeration: masked entries contribute the prior pdf at
        # the pinned value, unmasked entries the noisy marginal pdf at z
        from scipy.stats import norm

        rng = np.random.default_rng(22)
        prior = _random_prior(rng, 3, (1, 2, 2))
        mask = np.zeros((1, 2, 2), dtype=bool)
        mask[0, 0, 0] = True
        values = np.zeros((1, 2, 2))
        values[0, 0, 0] = 1.3
        spec = InpaintingSpec(values=values, mask=mask)
        z = rng.normal(size=(1, 2, 2))
        t = 0.55
        alpha, sigma = schedule(np.asarray(t))
        alpha, sigma = float(alpha), float(sigma)

        log_r = np.log(prior.weights).copy()
        for k in range(3):
            for idx in np.ndindex(1, 2, 2):
                mu = prior.means[(k,) + idx]
                var = prior.variances[(k,) + idx]
                if mask[idx]:
                    log_r[k] += norm.logpdf(values[idx], mu, np.sqrt(var))
                else:
                    log_r[k] += norm.logpdf(
                        z[idx], alpha * mu, np.sqrt(alpha**2 * var + sigma**2)
                    )
        want = np.exp(log_r - log_r.max())
        want /= want.sum()

        resp, _ = mixture_posterior(prior, z, t, inpainting=spec)
        np.testing.assert_allclose(resp, want, atol=1e-12)

    def test_unmasked_mean_matches_grid_given_pin(self):
        # A=T=1, D=2; pin entry 0, integrate entry 1 numerically
        prior = MixtureScenePrior(
            weights=np.array([0.4, 0.6]),
            means=np.array([[[[-1.0, 0.5]]], [[[1.5, -0.7]]]]),
            variances=np.array([[[[0.6, 0.9]]], [[[0.4, 1.2]]]]),
        )
        t = 0.5
        alpha, sigma = schedule(np.asarray(t))
        alpha, sigma = float(alpha), float(sigma)
        xbar0 = 0.4
        z1 = -0.2
        mask = np.array([[[True, False]]])
        values = np.array([[[xbar0, 0.0]]])
        z = np.array([[[9.9, z1]]])  # masked z entry must be ignored
        _, xhat = mixture_posterior(
            prior, z, t, inpainting=InpaintingSpec(values=values, mask=mask)
        )

        xs = np.linspace(-14.0, 14.0, 400_001)
        num = 0.0
        den = 0.0
        for k in range(2):
            w = prior.weights[k]
            mu0, mu1 = prior.means[k, 0, 0]
            v0, v1 = prior.variances[k, 0, 0]
            pin_pdf = np.exp(-0.5 * (xbar0 - mu0) ** 2 / v0) / np.sqrt(2 * np.pi * v0)
            px1 = np.exp(-0.5 * (xs - mu1) ** 2 / v1) / np.sqrt(2 * np.pi * v1)
            lik = np.exp(-0.5 * (z1 - alpha * xs) ** 2 / sigma**2)
            num += w * pin_pdf * (xs * px1 * lik).sum()
            den += w * pin_pdf * (px1 * lik).sum()
        assert xhat[0, 0, 1] == pytest.approx(num / den, abs=1e-6)


class TestValidity:
    def test_invalid_entries_carry_no_evidence(self):
        rng = np.random.default_rng(31)
        prior = _random_prior(rng, 3, (3, 4, 2))
        validity = np.ones((3, 4), dtype=bool)
        validity[2, :] = False
        z = rng.normal(size=(3, 4, 2))
        resp_a, xhat_a = mixture_posterior(prior, z, 0.6, validity=validity)
        z2 = z.copy()
        z2[2, :, :] = rng.normal(size=(4, 2)) * 50.0
        resp_b, xhat_b = mixture_posterior(prior, z2, 0.6, validity=validity)
        np.testing.assert_array_equal(resp_a, resp_b)
        # valid rows unaffected by garbage in the invalid row
        np.testing.assert_array_equal(xhat_a[:2], xhat_b[:2])


class TestOracleDenoiser:
    def test_v_relation(self):
        rng = np.random.default_rng(41)
        prior = _random_prior(rng, 2, (2, 3, 2))
        den = OracleDenoiser(prior)
        z = rng.normal(size=(2, 3, 2))
        t = 0.4
        v = den.predict_v(z, t, DenoiserContext())
        alpha, sigma = schedule(np.asarray(t))
        _, xhat = mixture_posterior(prior, z, t)
        np.testing.assert_allclose(
            v, (float(alpha) * z - xhat) / max(float(sigma), SIGMA_FLOOR), atol=1e-12
        )

    def test_counter_increments(self):
        prior = _scalar_prior([1.0], [0.0], [1.0])
        den = OracleDenoiser(prior)
        assert den.nfe == 0
        ctx = DenoiserContext()
        z = np.zeros((1, 1, 1))
        for _ in range(5):
            den.predict_v(z, 0.5, ctx)
        assert den.nfe == 5

    def test_counter_thread_safe(self):
        den = StubDenoiser()
        z = np.zeros((2, 3, 4))
        ctx = DenoiserContext()

        def work():
            for _ in range(200):
                den.predict_v(z, 0.5, ctx)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert den.nfe == 1600


class TestComponentOf:
    def test_labels_separated_samples(self):
        rng = np.random.default_rng(51)
        prior = MixtureScenePrior(
            weights=np.array([0.5, 0.5]),
            means=np.stack(
                [np.full((1, 2, 2), -6.0), np.full((1, 2, 2), 6.0)]
            ),
            variances=np.ones((2, 1, 2, 2)),
        )
        comp = rng.choice(2, size=300, p=prior.weights)
        x = prior.means[comp] + rng.standard_normal((300, 1, 2, 2))
        got = prior.component_of(x)
        np.testing.assert_array_equal(got, comp)


class TestStubDenoiser:
    def test_zero_prediction(self):
        den = StubDenoiser()
        z = np.ones((2, 3, 4))
        out = den.predict_v(z, 0.3, DenoiserContext())
        np.testing.assert_array_equal(out, np.zeros_like(z))
