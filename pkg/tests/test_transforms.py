import math

import numpy as np
import pytest
from scipy import integrate, special, stats

from bb84time.config import ShiftedExp, baseline
from bb84time.errors import DomainError, NumericalInstabilityError, ParameterError, TruncationWarning
from bb84time.rus_core import MgfEvaluator, shifted_exp_mgf
from bb84time.transforms import (I_abscissa, I_of, cdf_on_grid, erlang_tail_sum, half_plane_expectation,
                                 heralding_abscissa, heralding_mgf, invert_laplace_cdf, taylor_moments)


def heralding_samples(rng, gen, com, p, m, final_com=False):
    n = rng.geometric(p, m)
    h = n * gen.shift + rng.gamma(n, 1 / gen.rate) + (n - 1) * com.shift
    h = h + np.where(n > 1, rng.gamma(np.maximum(n - 1, 1), 1 / com.rate), 0.0)
    if final_com:
        h = h + com.shift + rng.exponential(1 / com.rate, m)
    return h


class TestErlangTail:
    def test_trivial(self):
        assert erlang_tail_sum(1, 1.0, 0, 0.0) == pytest.approx(1.0, abs=1e-15)
        assert erlang_tail_sum(1, 1.0, 1, 0.0) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("shape", range(1, 21))
    def test_total_mass(self, shape):
        assert erlang_tail_sum(shape, 2.5, 0, 0.0) == 1.0

    def test_quadrature(self):
        f = lambda y: math.exp(-0.5 * y) * stats.gamma.pdf(y, 3, scale=0.5)
        ref, _ = integrate.quad(f, 1.0, math.inf, epsabs=1e-14, epsrel=1e-13)
        assert abs(erlang_tail_sum(3, 2.0, 0.5, 1.0) - ref) < 1e-10

    def test_complex_c(self):
        c = 0.3 - 1.7j
        re, _ = integrate.quad(lambda y: (np.exp(-c * y) * stats.gamma.pdf(y, 4, scale=1.0)).real, 2.0, np.inf)
        im, _ = integrate.quad(lambda y: (np.exp(-c * y) * stats.gamma.pdf(y, 4, scale=1.0)).imag, 2.0, np.inf)
        assert abs(erlang_tail_sum(4, 1.0, c, 2.0) - complex(re, im)) < 1e-10

    def test_large_shape_no_overflow(self):
        v = erlang_tail_sum(400, 3.0, 0.2, 50.0)
        assert np.isfinite(v) and 0 < v.real < 1

    def test_rejects(self):
        with pytest.raises(ParameterError):
            erlang_tail_sum(0, 1.0, 0, 0)
        with pytest.raises(DomainError):
            erlang_tail_sum(2, 1.0, -2.0, 0)


class TestHalfPlane:
    se = ShiftedExp(2.0, 0.5)

    def test_symmetry_at_zero(self):
        v, _ = half_plane_expectation(0, 0, self.se, self.se, 0.3, cutoff=None)
        # contour quadrature accuracy is about 1e-11
        assert v == pytest.approx(0.5, abs=1e-10)

    def test_monte_carlo(self):
        rng = np.random.default_rng(11)
        m = 2_000_000
        ha = heralding_samples(rng, self.se, self.se, 0.5, m)
        hb = heralding_samples(rng, self.se, self.se, 0.5, m)
        eta, t = 0.1, 0.05
        x = np.exp(eta * ha - (eta - t) * hb) * (hb > ha)
        v, _ = half_plane_expectation(eta, t, self.se, self.se, 0.5)
        assert abs(v.real - x.mean()) < 3 * x.std() / math.sqrt(m)
        assert abs(v.imag) < 1e-12

    def test_termwise_agrees(self):
        eta, t = 0.15 + 0.4j, 0.05 - 0.2j
        a, _ = half_plane_expectation(eta, t, self.se, self.se, 0.6, cutoff=12, method="contour", warn=False)
        b, _ = half_plane_expectation(eta, t, self.se, self.se, 0.6, cutoff=12, method="termwise", warn=False)
        assert abs(a - b) < 1e-10

    def test_default_cutoff_remainder(self):
        v, rem = half_plane_expectation(0.2, 0.1, self.se, self.se, 0.5)
        assert rem < 1e-12 * abs(v)

    def test_truncation_warns(self):
        with pytest.warns(TruncationWarning):
            half_plane_expectation(0.02, 0.01, self.se, self.se, 0.1, cutoff=3)
        # at p_gen = 0.1 the default cutoff leaves a remainder near 0.9^128
        with pytest.warns(TruncationWarning):
            _, rem = half_plane_expectation(0.02, 0.01, self.se, self.se, 0.1)
        assert 1e-8 < rem < 1e-6

    def test_real_positive(self):
        for eta, t in ((0.0, 0.02), (0.3, 0.01), (0.05, 0.02)):
            v, _ = half_plane_expectation(eta, t, self.se, self.se, 0.1, cutoff=None)
            assert v.real > 0 and abs(v.imag) < 1e-12


class TestHeralding:
    def test_abscissa_root(self):
        g = c = ShiftedExp(2.0, 0.5)
        b = heralding_abscissa(g, c, 0.1)
        assert 0.9 * g.mgf(b) * c.mgf(b) == pytest.approx(1.0, rel=1e-10)

    def test_cutoff_converges(self):
        g = c = ShiftedExp(2.0, 0.5)
        z = 0.01 + 0.2j
        assert heralding_mgf(z, g, c, 0.1, cutoff=2000) == pytest.approx(heralding_mgf(z, g, c, 0.1), rel=1e-12)


class TestI:
    cfg = baseline(0.1)

    def test_trivial(self):
        assert I_of(0, math.inf, self.cfg) == pytest.approx(1.0, abs=1e-12)
        v = I_of(0, 100.0, self.cfg)
        assert 0 < v.real <= 1

    def test_monte_carlo(self):
        # at t = 0.05 the weight e^{2tV} has infinite mean (b = 0.0523), so the check runs at t = 0.02
        rng = np.random.default_rng(5)
        m = 1_000_000
        va = heralding_samples(rng, self.cfg.gen, self.cfg.com, 0.1, m, True)
        vb = heralding_samples(rng, self.cfg.gen, self.cfg.com, 0.1, m, True)
        x = np.exp(0.02 * np.maximum(va, vb))
        assert abs(I_of(0.02, math.inf, self.cfg).real - x.mean()) < 3 * x.std() / math.sqrt(m)

    def test_monte_carlo_finite_s(self):
        rng = np.random.default_rng(6)
        m, s = 1_000_000, 40.0
        n_a, n_b = rng.geometric(0.1, m), rng.geometric(0.1, m)
        lam, a = self.cfg.com.rate, self.cfg.com.shift
        ha = n_a * 0.5 + rng.gamma(n_a, 0.5) + (n_a - 1) * 0.5 + np.where(n_a > 1, rng.gamma(np.maximum(n_a - 1, 1), 0.5), 0)
        hb = n_b * 0.5 + rng.gamma(n_b, 0.5) + (n_b - 1) * 0.5 + np.where(n_b > 1, rng.gamma(np.maximum(n_b - 1, 1), 0.5), 0)
        ca, cb = a + rng.exponential(1 / lam, m), a + rng.exponential(1 / lam, m)
        va, vb = ha + ca, hb + cb
        x = np.exp(0.01 * np.maximum(va, vb) - (np.abs(va - vb) + ca + cb) / s)
        assert abs(I_of(0.01, s, self.cfg).real - x.mean()) < 3 * x.std() / math.sqrt(m)

    def test_centered(self):
        t = 0.01 + 0.3j
        shift = self.cfg.gen.shift + self.cfg.com.shift
        assert I_of(t, 500.0, self.cfg, centered=True) == pytest.approx(
            np.exp(-t * shift) * I_of(t, 500.0, self.cfg), rel=1e-9)

    def test_abscissa(self):
        assert I_abscissa(self.cfg) == pytest.approx(0.052332, abs=1e-6)

    def test_rejects_s(self):
        with pytest.raises(ParameterError):
            I_of(0.0, 0.0, self.cfg)


class TestInversion:
    def test_exp(self):
        assert invert_laplace_cdf(shifted_exp_mgf(1.0), 1.0) == pytest.approx(1 - math.exp(-1), abs=1e-7)

    def test_below_shift(self):
        assert invert_laplace_cdf(shifted_exp_mgf(1.0, 2.0), 1.0) == 0.0

    def test_gamma(self):
        ev = MgfEvaluator(lambda t: (2 / (2 - t)) ** 3, 2.0, analytic=True)
        ref = special.gammainc(3, 3.0)
        assert ref == pytest.approx(0.5768099, abs=1e-7)
        for method in ("euler", "talbot"):
            assert invert_laplace_cdf(ev, 1.5, method) == pytest.approx(ref, abs=1e-7)

    def test_talbot_needs_analytic(self):
        ev = MgfEvaluator(lambda t: 1 / (1 - t), 1.0)
        with pytest.raises(DomainError):
            invert_laplace_cdf(ev, 1.0, "talbot")

    def test_cross_check_flags_disagreement(self):
        # a noisy transform: the two routes amplify the noise differently
        rng = np.random.default_rng(0)
        ev = MgfEvaluator(lambda t: 1 / (1 - t) + 0.01 * rng.standard_normal(), 1.0)
        with pytest.raises(NumericalInstabilityError):
            invert_laplace_cdf(ev, 1.0, cross_check=True)

    def test_grid_monotone(self):
        ev = MgfEvaluator(lambda t: (1 / (1 - t)) ** 5, 1.0, analytic=True)
        grid = np.linspace(0.1, 20, 60)
        v = cdf_on_grid(ev, grid)
        assert np.all(np.diff(v) >= -1e-10)
        with pytest.raises(ParameterError):
            cdf_on_grid(ev, grid[::-1])


class TestMoments:
    def test_gamma_moments(self):
        # Gamma(3, rate 2): E X^k = Gamma(3+k) / (Gamma(3) 2^k)
        fn = lambda t: (2 / (2 - t)) ** 3
        got = taylor_moments(fn, range(1, 14), radius=1.0)
        ref = [special.gamma(3 + k) / (2 * 2 ** k) for k in range(1, 14)]
        np.testing.assert_allclose(got, ref, rtol=1e-9)

    def test_npts(self):
        with pytest.raises(ParameterError):
            taylor_moments(lambda t: 1 / (1 - t), [10], 0.5, npts=8)
