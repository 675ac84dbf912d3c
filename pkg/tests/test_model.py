import math

import numpy as np
import pytest

from lvclab import quad
from lvclab.errors import CapabilityError, ModulationError
from lvclab.model import (BlockPrior, ChannelModel, CustomChannel,
                          GaussianChannel, SystemShape, bernoulli_gaussian,
                          bpsk, density, density_d1, density_d2,
                          discrete_prior, finite_difference_d1,
                          finite_difference_d2, gaussian_prior, iid_part,
                          matched_model, prior_second_moment, sample_output,
                          sample_prior)

STD_NORMAL_PEAK = 1.0 / math.sqrt(2.0 * math.pi)


class TestGaussianChannel:
    def test_peak_value(self):
        ch = GaussianChannel(1.0)
        assert density(ch, 0.0, 0.0) == pytest.approx(STD_NORMAL_PEAK, abs=1e-7)

    def test_shift_invariance(self):
        ch = GaussianChannel(1.0)
        assert density(ch, 1.0, 1.0) == pytest.approx(density(ch, 0.0, 0.0), abs=1e-15)

    def test_quarter_variance_value(self):
        ch = GaussianChannel(0.25)
        expect = (1.0 / math.sqrt(2.0 * math.pi * 0.25)) * math.exp(-0.5 ** 2 / 0.5)
        assert density(ch, 0.5, 0.0) == pytest.approx(expect, rel=1e-12)

    def test_d1_at_center_is_zero(self):
        ch = GaussianChannel(1.0)
        assert density_d1(ch, 0.0, 0.0) == pytest.approx(0.0, abs=1e-15)

    def test_d2_at_center(self):
        ch = GaussianChannel(1.0)
        # ((y-u)^2 - s2)/s2^2 * rho at y=u: -rho
        assert density_d2(ch, 0.0, 0.0) == pytest.approx(-STD_NORMAL_PEAK, abs=1e-7)

    def test_finite_difference_matches_analytic(self):
        rng = np.random.default_rng(42)
        for ch in (GaussianChannel(1.0), GaussianChannel(0.3)):
            for _ in range(20):
                y, u = rng.normal(size=2) * 2.0
                assert finite_difference_d1(ch, y, u) == pytest.approx(
                    ch.d1(y, u), abs=1e-6)
                assert finite_difference_d2(ch, y, u) == pytest.approx(
                    ch.d2(y, u), abs=1e-6)

    def test_rejects_non_finite_input(self):
        ch = GaussianChannel(1.0)
        with pytest.raises(ValueError):
            density(ch, float("nan"), 0.0)
        with pytest.raises(ValueError):
            density_d1(ch, 0.0, float("inf"))

    def test_rejects_zero_noise(self):
        with pytest.raises(ValueError):
            GaussianChannel(0.0)

    def test_tiny_noise_sampling_tracks_input(self):
        ch = GaussianChannel(1e-12)
        rng = np.random.default_rng(0)
        u = np.full(100, 0.7)
        y = sample_output(ch, u, rng)
        assert np.abs(y - 0.7).max() < 1e-5

    def test_density_normalizes(self):
        for s2 in (0.25, 1.0, 4.0):
            ch = GaussianChannel(s2)
            res = quad.integrate_y(lambda y: ch.density(y, 0.3),
                                   0.3 - 10 * ch.scale, 0.3 + 10 * ch.scale,
                                   tol=1e-10)
            assert res.value == pytest.approx(1.0, abs=1e-8)

    def test_derivatives_integrate_to_zero(self):
        ch = GaussianChannel(0.5)
        lo, hi = -0.2 - 10 * ch.scale, -0.2 + 10 * ch.scale
        d1 = quad.integrate_y(lambda y: ch.d1(y, -0.2), lo, hi, tol=1e-10)
        d2 = quad.integrate_y(lambda y: ch.d2(y, -0.2), lo, hi, tol=1e-10)
        assert abs(d1.value) < 1e-6
        assert abs(d2.value) < 1e-6


class TestCustomChannel:
    def _laplace(self, scale=1.0):
        return CustomChannel(
            density=lambda y, u: np.exp(-np.abs(np.asarray(y) - u) / scale) / (2 * scale),
            order=1, scale=scale)

    def test_second_derivative_capability_error(self):
        ch = self._laplace()
        with pytest.raises(CapabilityError):
            density_d2(ch, 0.5, 0.0)

    def test_fd_fallback_first_derivative(self):
        ch = self._laplace()
        got = density_d1(ch, 2.0, 0.0)
        assert got == pytest.approx(math.exp(-2.0) / 2.0, abs=1e-5)

    def test_sampler_missing(self):
        ch = self._laplace()
        with pytest.raises(CapabilityError):
            sample_output(ch, 0.0, np.random.default_rng(0))

    def test_custom_matches_gaussian_reference(self):
        ref = GaussianChannel(0.8)
        ch = CustomChannel(density=lambda y, u: ref.density(y, u),
                           scale=ref.scale, order=2)
        rng = np.random.default_rng(3)
        for _ in range(20):
            y, u = rng.normal(size=2)
            assert ch.d1(y, u) == pytest.approx(ref.d1(y, u), abs=1e-6)
            assert ch.d2(y, u) == pytest.approx(ref.d2(y, u), abs=1e-6)


class TestPriors:
    def test_second_moments(self):
        assert prior_second_moment(bpsk()) == pytest.approx(1.0, abs=1e-15)
        assert prior_second_moment(gaussian_prior(1.0)) == pytest.approx(1.0)
        assert prior_second_moment(bernoulli_gaussian(0.1, 1.0)) == pytest.approx(0.1)

    def test_bernoulli_gaussian_moment_against_quadrature(self):
        prior = bernoulli_gaussian(0.35, 1.7)
        res = quad.integrate_y(
            lambda x: x * x * 0.35 * np.exp(-0.5 * x * x / 1.7) / math.sqrt(2 * math.pi * 1.7),
            -20, 20, tol=1e-11)
        assert prior.second_moment == pytest.approx(res.value, abs=1e-9)

    def test_discrete_prior_validates_distribution(self):
        with pytest.raises(ValueError):
            discrete_prior([-1.0, 1.0], [0.6, 0.6])

    def test_bpsk_sampling_mean_clt_band(self):
        rng = np.random.default_rng(7)
        draws = sample_prior(bpsk(), 10 ** 6, rng)
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert abs(draws.mean()) < 3.3 / math.sqrt(10 ** 6)

    def test_gaussian_sampling_variance_band(self):
        rng = np.random.default_rng(11)
        draws = sample_prior(gaussian_prior(1.0), 10 ** 6, rng)
        assert 0.995 < draws.var() < 1.005

    def test_discrete_frequencies_binomial_bound(self):
        prior = discrete_prior([-2.0, 0.0, 2.0], [0.2, 0.5, 0.3])
        rng = np.random.default_rng(13)
        n = 200_000
        draws = sample_prior(prior, n, rng)
        for atom, p in zip(prior.atoms, prior.atom_probs):
            freq = (draws == atom).mean()
            assert abs(freq - p) < 3.3 * math.sqrt(p * (1 - p) / n)

    def test_bernoulli_gaussian_sampling(self):
        prior = bernoulli_gaussian(0.1, 1.0)
        rng = np.random.default_rng(17)
        draws = sample_prior(prior, 10 ** 6, rng)
        assert abs((draws != 0).mean() - 0.1) < 3.3 * math.sqrt(0.09 / 10 ** 6)
        assert abs((draws ** 2).mean() - 0.1) < 5e-3

    def test_tilted_moments_bpsk_is_tanh(self):
        prior = bpsk()
        b = np.array([-1.0, 0.0, 2.5])
        _, mean, m2 = prior.tilted_moments(b, c=0.7)
        assert np.allclose(mean, np.tanh(b), atol=1e-12)
        assert np.allclose(m2, 1.0, atol=1e-12)

    def test_tilted_moments_gaussian_closed_form(self):
        prior = gaussian_prior(2.0)
        b = np.array([0.3, -1.2])
        c = -0.25
        lam = 1.0 / 2.0 + 0.5
        _, mean, m2 = prior.tilted_moments(b, c)
        assert np.allclose(mean, b / lam)
        assert np.allclose(m2, 1.0 / lam + (b / lam) ** 2)

    def test_tilted_moments_gaussian_rejects_divergent_tilt(self):
        with pytest.raises(ModulationError):
            gaussian_prior(1.0).tilted_moments(0.0, 0.6)

    def test_tilted_moments_bernoulli_gaussian_against_quadrature(self):
        prior = bernoulli_gaussian(0.3, 1.0)
        b, c = 1.3, -0.2

        def unnorm(x):
            base = 0.3 * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
            return base * np.exp(c * x * x + b * x)

        z_cont = quad.integrate_y(unnorm, -20, 20, tol=1e-12).value
        m_cont = quad.integrate_y(lambda x: x * unnorm(x), -20, 20, tol=1e-12).value
        z = z_cont + 0.7  # spike at zero carries exp(0) * (1 - sparsity)
        _, mean, m2 = prior.tilted_moments(np.array([b]), c)
        assert mean[0] == pytest.approx(m_cont / z, abs=1e-10)
        m2_cont = quad.integrate_y(lambda x: x * x * unnorm(x), -20, 20, tol=1e-12).value
        assert m2[0] == pytest.approx(m2_cont / z, abs=1e-10)


class TestBlockPrior:
    def _block(self):
        table = np.array([[0.4, 0.1], [0.1, 0.4]])
        return BlockPrior(atoms=(-1.0, 1.0), table=table, rest=bpsk())

    def test_table_must_normalize(self):
        with pytest.raises(ValueError):
            BlockPrior(atoms=(-1.0, 1.0), table=np.array([[0.5, 0.2], [0.1, 0.1]]),
                       rest=bpsk())

    def test_second_moment_is_iid_limit(self):
        assert self._block().second_moment == pytest.approx(1.0)

    def test_sampling_shape_and_support(self):
        prior = self._block()
        rng = np.random.default_rng(5)
        x = sample_prior(prior, 10, rng)
        assert x.shape == (10,)
        assert set(np.unique(x)) <= {-1.0, 1.0}

    def test_block_frequencies(self):
        prior = self._block()
        rng = np.random.default_rng(8)
        hits = 0
        n = 40_000
        for _ in range(n):
            x = prior.sample(2, rng)
            hits += x[0] == x[1]
        assert abs(hits / n - 0.8) < 3.3 * math.sqrt(0.16 / n)

    def test_iid_part(self):
        assert iid_part(self._block()) == bpsk()
        assert iid_part(bpsk()) == bpsk()


class TestSystemShape:
    def test_beta_exact(self):
        assert SystemShape(K=16, N=32).beta == 0.5

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            SystemShape(K=0, N=4)

    def test_matched_model_flag(self):
        m = matched_model(bpsk(), GaussianChannel(0.25), beta=0.5)
        assert m.matched
        mm = ChannelModel(true_prior=bpsk(), true_channel=GaussianChannel(0.25),
                          post_prior=bpsk(), post_channel=GaussianChannel(0.5),
                          beta=0.5)
        assert not mm.matched
