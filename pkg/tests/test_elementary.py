import math

import numpy as np
import pytest
from scipy import optimize

from bb84time.elementary import (DiffCutoffModel, DiffCutoffParams, Example1Params, diffco_chernoff, diffco_fit,
                                 diffco_max_mgf, diffco_mgf_terms, diffco_mgf_W, ex1_bound, ex1_mgf_w, ex1_mgf_x,
                                 ex1_prior_reference, ex1_sharper_condition, ex1_simulate, ex1_spec,
                                 link_time_mgf, link_time_moments, simulate_link_time, t_star)
from bb84time.errors import DivergenceError, ParameterError
from bb84time.rus_core import chernoff_bound, convergence_abscissa, rus_mgf
from bb84time.stats import ecdf
from bb84time.transforms import taylor_moments


class TestExample1:
    par = Example1Params(1.0, 0.5)

    def test_validation(self):
        with pytest.raises(ParameterError):
            Example1Params(0.0, 0.5)
        with pytest.raises(ParameterError):
            Example1Params(1.0, 1.0)
        with pytest.raises(ParameterError):
            ex1_bound(self.par, 0.0)

    def test_mgf_against_composition(self):
        ev = rus_mgf(ex1_spec(self.par))
        for t in (0.0, 0.1, 0.3, 0.2 + 0.5j):
            assert ex1_mgf_w(self.par, t) == pytest.approx(ev(t), rel=1e-12)
        with pytest.raises(DivergenceError):
            ex1_mgf_w(self.par, self.par.b_prime)

    def test_abscissa(self):
        assert convergence_abscissa(ex1_spec(self.par)) == pytest.approx(self.par.b_prime, rel=1e-9)

    def test_bound_is_one_at_small_s(self):
        s = np.array([0.1, 0.5, 1.0])
        assert np.all(t_star(self.par, s) == 0)
        np.testing.assert_allclose(ex1_bound(self.par, s), 1.0, rtol=1e-15)

    def test_closed_form_is_the_infimum(self):
        grid = np.linspace(0, self.par.b_prime, 20_001)[:-1]
        ev = rus_mgf(ex1_spec(self.par))
        for s in (3.0, 10.0, 40.0):
            num = chernoff_bound(ev, s, grid=grid)
            assert ex1_bound(self.par, s) <= num * (1 + 1e-12)
            assert ex1_bound(self.par, s) == pytest.approx(num, rel=1e-6)

    @pytest.mark.parametrize("lam,p", [(1.0, 0.5), (2.5, 0.1), (0.4, 0.9)])
    def test_t_star_limit(self, lam, p):
        par = Example1Params(lam, p)
        s = np.geomspace(0.1, 1e4, 400) / lam
        t = t_star(par, s)
        assert np.all(np.diff(t) >= 0) and np.all(t < par.b_prime)
        assert abs(t_star(par, 1e4 / lam) - par.b_prime) < 1e-3 * lam

    def test_prior_rate_below_b_prime(self):
        for p in np.linspace(0.001, 0.999, 999):
            par = Example1Params(1.0, p)
            assert par.prior_rate < par.b_prime

    def test_sharper_condition(self):
        assert ex1_mgf_x(self.par, 1 / 3) == pytest.approx(1.8, rel=1e-15)
        holds, c = ex1_sharper_condition(self.par)
        assert holds and math.isfinite(c)
        s = np.linspace(c, 3 * c, 30)
        assert np.all(ex1_bound(self.par, s) < ex1_prior_reference(self.par, s))

    def test_simulation_mean(self):
        rng = np.random.default_rng(1)
        x = ex1_simulate(self.par, rng, 200_000)
        mean = self.par.mean_x / self.par.p
        assert abs(x.mean() - mean) < 4 * x.std() / math.sqrt(x.size)

    def test_bound_dominates_at_s20(self):
        # 2e6 direct simulations (reduced from 1e7 for memory)
        x = ex1_simulate(self.par, np.random.default_rng(2), 2_000_000)
        assert ex1_bound(self.par, 20.0) >= np.mean(x > 20.0)

    def test_bound_dominates_twelve_triples(self):
        rng = np.random.default_rng(3)
        for lam, p in ((1.0, 0.5), (2.0, 0.2), (0.5, 0.8), (3.0, 0.05)):
            par = Example1Params(lam, p)
            x = ex1_simulate(par, rng, 200_000)
            s = np.quantile(x, [0.5, 0.9, 0.999])
            assert np.all(ex1_bound(par, s) >= 1 - ecdf(x, s))


class TestDiffFit:
    def test_erlang_limit(self):
        fit = diffco_fit(DiffCutoffParams(3.0, 0.0, 1.0, 1.0))
        assert fit.k == pytest.approx(2.0, rel=1e-14)
        assert fit.theta == pytest.approx(1 / 3, rel=1e-14)

    @pytest.mark.parametrize("p", [0.05, 0.3, 0.7])
    def test_wald_mean(self, p):
        fit = diffco_fit(DiffCutoffParams(2.0, 0.0, p, 1.0))
        assert fit.k * fit.theta == pytest.approx(2 / (2.0 * p), rel=1e-14)

    def test_two_moments_from_mgf(self):
        par = DiffCutoffParams(2.0, 0.5, 0.3, 1.0)
        fit = diffco_fit(par)
        # pole of the link-time MGF, then Cauchy moments of T - 2a inside half that radius
        lam, a, p = par.lam, par.a, par.p
        pole = optimize.brentq(lambda t: (lam - t) ** 2 - math.exp(2 * t * a) * (1 - p) * lam ** 2, 0, lam - 1e-9)
        m1, m2 = taylor_moments(lambda t: np.exp(-2 * t * a) * link_time_mgf(par, t), [1, 2], 0.5 * pole)
        assert fit.k * fit.theta == pytest.approx(m1, rel=1e-8)
        assert fit.k * fit.theta ** 2 == pytest.approx(m2 - m1 ** 2, rel=1e-8)
        assert link_time_moments(par) == pytest.approx((m1, m2 - m1 ** 2), rel=1e-8)

    def test_link_time_samples(self):
        par = DiffCutoffParams(2.0, 0.5, 0.3, 1.0)
        x = simulate_link_time(par, np.random.default_rng(4), 400_000) - 2 * par.a
        mean, var = link_time_moments(par)
        assert abs(x.mean() - mean) < 4 * x.std() / math.sqrt(x.size)
        assert abs(x.var() / var - 1) < 0.02

    def test_validation(self):
        for bad in ((0.0, 0.0, 0.5, 1.0), (1.0, -1.0, 0.5, 1.0), (1.0, 0.0, 0.0, 1.0), (1.0, 0.0, 0.5, 0.0)):
            with pytest.raises(ParameterError):
                DiffCutoffParams(*bad)


class TestDiffTerms:
    par = DiffCutoffParams(2.0, 0.5, 0.3, 1.0)
    fit = diffco_fit(par)

    def test_partition_at_zero(self):
        m_in, m_out = diffco_mgf_terms(self.par, self.fit, 0.0)
        assert abs(m_in + m_out - 1) < 1e-10
        g = np.random.default_rng(5).gamma(self.fit.k, self.fit.theta, (1_000_000, 2))
        hit = np.abs(g[:, 0] - g[:, 1]) <= self.par.tau
        assert abs(m_in.real - hit.mean()) < 4 * hit.std() / math.sqrt(hit.size)

    def test_no_cutoff(self):
        wide = DiffCutoffParams(2.0, 0.5, 0.3, 1e6)
        m_in, m_out = diffco_mgf_terms(wide, self.fit, 0.1)
        assert abs(m_out) < 1e-12
        assert m_in.real == pytest.approx(diffco_max_mgf(self.fit, wide.a, 0.1), rel=1e-8)
        assert diffco_mgf_W(wide, 0.1).real == pytest.approx(m_in.real, rel=1e-10)

    @pytest.mark.parametrize("t", [-0.5, 0.0, 0.1, 0.15])
    def test_identity(self, t):
        m_in, m_out = diffco_mgf_terms(self.par, self.fit, t)
        assert abs((m_in + m_out).real - diffco_max_mgf(self.fit, self.par.a, t)) < 1e-8

    def test_complex_path(self):
        # a vanishing imaginary part switches to the swapped-order route
        re = diffco_mgf_terms(self.par, self.fit, 0.1)
        cx = diffco_mgf_terms(self.par, self.fit, 0.1 + 1e-300j)
        for x, y in zip(re, cx):
            assert abs(x - y) < 1e-9
        z = 0.1 + 0.7j
        a = diffco_mgf_terms(self.par, self.fit, z)
        b = diffco_mgf_terms(self.par, self.fit, z.conjugate())
        for x, y in zip(a, b):
            assert abs(x - y.conjugate()) < 1e-10

    def test_monte_carlo(self):
        # 1e6 samples (reduced from 1e7): gamma samples check the quadrature,
        # exact link times measure the moment-matching error
        rng = np.random.default_rng(6)
        t, m = 0.1, 1_000_000
        m_in, m_out = diffco_mgf_terms(self.par, self.fit, t)
        g = rng.gamma(self.fit.k, self.fit.theta, (m, 2))
        w = np.exp(t * (g.max(axis=1) + 2 * self.par.a))
        hit = np.abs(g[:, 0] - g[:, 1]) <= self.par.tau
        for val, x in ((m_in, w * hit), (m_out, w * ~hit)):
            assert abs(val.real - x.mean()) < 4 * x.std() / math.sqrt(m)
        tx = simulate_link_time(self.par, rng, (2 * m)).reshape(m, 2) - 2 * self.par.a
        wx = np.exp(t * (tx.max(axis=1) + 2 * self.par.a))
        hx = np.abs(tx[:, 0] - tx[:, 1]) <= self.par.tau
        gap = abs(m_in.real - (wx * hx).mean()) / m_in.real
        assert gap < 0.05

    def test_divergence(self):
        with pytest.raises(DivergenceError):
            diffco_mgf_terms(self.par, self.fit, self.fit.abscissa)


class TestDiffW:
    par = DiffCutoffParams(2.0, 0.5, 0.3, 1.0)

    def test_one_at_zero(self):
        assert diffco_mgf_W(self.par, 0.0) == pytest.approx(1.0, abs=1e-10)

    def test_abscissa_root(self):
        model = DiffCutoffModel(self.par)
        b = model.abscissa
        assert 0 < b < model.fit.abscissa
        assert abs(model.terms(b)[1].real - 1) < 1e-6
        with pytest.raises(DivergenceError):
            model.mgf(b * 1.01)

    def test_chernoff_dominates(self):
        model = DiffCutoffModel(self.par)
        x = model.simulate(np.random.default_rng(7), 200_000)
        s = np.quantile(x, [0.5, 0.9, 0.99, 0.999])
        assert np.all(diffco_chernoff(self.par, s, 32) >= 1 - ecdf(x, s))
        assert x.min() >= 2 * self.par.a
