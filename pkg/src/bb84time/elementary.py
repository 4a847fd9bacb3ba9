"""Two elementary repeat-until-success modules.

* Example 1: ``W = sum_{k<=N} max{T1, T2}`` with ``T_i ~ Exp(lambda)`` and
  ``N ~ Geo(p)``; closed-form Chernoff bound and a comparison with a bound of
  decay rate ``2 p lambda / 3``.
* Diff-time cut-off: the swap at the repeater happens only when the two link
  completion times differ by at most tau.  Link times ``T - 2a`` are
  approximated by a moment-matched gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import DivergenceError, ParameterError
from .rus_core import MgfEvaluator, TrialSpec, chernoff_bound, constant_one, convergence_abscissa, geometric


# ---------------------------------------------------------------- Example 1

@dataclass(frozen=True)
class Example1Params:
    lam: float
    p: float

    def __post_init__(self):
        if not (self.lam > 0):
            raise ParameterError("lambda must be positive")
        if not (0 < self.p < 1):
            raise ParameterError("p must lie in (0, 1)")

    @property
    def b_prime(self) -> float:
        """Abscissa of the MGF of W."""
        return self.lam * (3 - math.sqrt(9 - 8 * self.p)) / 2

    @property
    def mean_x(self) -> float:
        return 3 / (2 * self.lam)

    @property
    def prior_rate(self) -> float:
        return 2 * self.p * self.lam / 3


def ex1_mgf_x(params: Example1Params, t):
    lam = params.lam
    return 2 * lam ** 2 / ((lam - t) * (2 * lam - t))


def ex1_mgf_w(params: Example1Params, t):
    lam, p = params.lam, params.p
    if np.real(t) >= params.b_prime:
        raise DivergenceError(f"MGF of W diverges at t={t}")
    return 2 * lam ** 2 * p / (t * t - 3 * lam * t + 2 * lam ** 2 * p)


def ex1_spec(params: Example1Params) -> TrialSpec:
    mx = MgfEvaluator(lambda t: ex1_mgf_x(params, t), params.lam, analytic=True, name="max2exp")
    return TrialSpec.constant_p(params.p, mx, constant_one())


def t_star(params: Example1Params, s):
    """Minimizer of the Chernoff exponent at level s."""
    lam, p = params.lam, params.p
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (3 * lam * s - 2 - np.sqrt(4 + lam ** 2 * s ** 2 * (9 - 8 * p))) / (2 * s)
    t = np.maximum(0.0, np.nan_to_num(t, nan=0.0))
    return float(t) if t.ndim == 0 else t


def ex1_bound(params: Example1Params, s):
    if np.any(np.asarray(s) <= 0):
        raise ParameterError("s must be positive")
    lam, p = params.lam, params.p
    t = t_star(params, s)
    val = np.exp(-t * np.asarray(s)) * 2 * lam ** 2 * p / (t * t - 3 * lam * t + 2 * lam ** 2 * p)
    return float(val) if np.ndim(val) == 0 else val


def ex1_prior_reference(params: Example1Params, s):
    """``exp(p - 2 p lambda s / 3)``: the comparison bound on the log scale."""
    return np.exp(params.p - params.prior_rate * np.asarray(s, dtype=float))


def ex1_sharper_condition(params: Example1Params) -> tuple[bool, float]:
    """Whether the bound is eventually sharper, and an explicit crossover level."""
    lam, p = params.lam, params.p
    holds = bool(ex1_mgf_x(params, p / params.mean_x) < 1 / (1 - p))
    if not holds:
        return False, math.inf
    eps = (params.b_prime - params.prior_rate) / 2
    t = params.b_prime - eps
    log_m = math.log(ex1_mgf_w(params, t))
    return True, (log_m - p) / (t - params.prior_rate)


def ex1_simulate(params: Example1Params, rng, size: int) -> np.ndarray:
    n = geometric(rng, params.p, size)
    tot = int(n.sum())
    x = rng.standard_exponential((tot, 2)).max(axis=1) / params.lam
    starts = np.concatenate([[0], np.cumsum(n)[:-1]])
    return np.add.reduceat(x, starts)


# ---------------------------------------------------------------- diff-time cut-off

@dataclass(frozen=True)
class DiffCutoffParams:
    lam: float
    a: float
    p: float
    tau: float

    def __post_init__(self):
        if not (self.lam > 0):
            raise ParameterError("lambda must be positive")
        if not (self.a >= 0):
            raise ParameterError("a must be >= 0")
        if not (0 < self.p <= 1):
            raise ParameterError("p must lie in (0, 1]")
        if not (self.tau > 0):
            raise ParameterError("tau must be positive")


@dataclass(frozen=True)
class GammaFit:
    k: float
    theta: float

    @property
    def abscissa(self) -> float:
        return 1 / self.theta


def link_time_moments(params: DiffCutoffParams) -> tuple[float, float]:
    """Mean and variance of ``T - 2a`` (geometric number of gen + com pairs)."""
    lam, a, p = params.lam, params.a, params.p
    u = a * lam
    mean = 2 * (u * (1 - p) + 1) / (lam * p)
    var = (2 * p + 4 * (u + 1) ** 2 * (1 - p)) / (lam ** 2 * p ** 2)
    return mean, var


def link_time_mgf(params: DiffCutoffParams, t):
    lam, a, p = params.lam, params.a, params.p
    e = np.exp(2 * t * a)
    return e * lam ** 2 * p / ((lam - t) ** 2 - e * (1 - p) * lam ** 2)


def diffco_fit(params: DiffCutoffParams) -> GammaFit:
    """Shape k' and scale theta' of the gamma matching mean and variance of ``T - 2a``."""
    lam, a, p = params.lam, params.a, params.p
    u = a * lam
    core = 2 * (u * (1 - p) + 1) ** 2 - p * (1 - 2 * u ** 2 * (1 - p))
    k = 2 * (u * (1 - p) + 1) ** 2 / core
    theta = core / (lam * p * (1 + u * (1 - p)))
    return GammaFit(k, theta)


def _inner_real(fit: GammaFit, t: float, lo, hi):
    # int_lo^hi e^{ty} g(y) dy in closed form
    k, th = fit.k, fit.theta
    r = 1 / th - t
    pref = (1 - t * th) ** (-k)
    if hi is None:
        return pref * special.gammaincc(k, lo * r)
    return pref * (special.gammainc(k, hi * r) - special.gammainc(k, lo * r))


class _Gamma:
    """Fast scalar gamma density helpers (frozen scipy distributions are slow per call)."""

    def __init__(self, fit: GammaFit):
        self.k, self.th = fit.k, fit.theta
        self.c = special.gammaln(fit.k) + fit.k * math.log(fit.theta)

    def logpdf(self, x):
        return (self.k - 1) * math.log(x) - x / self.th - self.c

    def pdf(self, x):
        return math.exp(self.logpdf(x)) if x > 0 else 0.0

    def cdf(self, x):
        return float(special.gammainc(self.k, x / self.th)) if x > 0 else 0.0


def _check_t(fit: GammaFit, t):
    if np.real(t) >= fit.abscissa:
        raise DivergenceError(f"gamma-pair integrals diverge at t={t}")


def _outer(fn, fit: GammaFit, complex_valued=False):
    # split at the gamma mode and a few scales to help the adaptive rule
    k, th = fit.k, fit.theta
    pts = [0.0, max(k - 1, 0) * th, k * th + 6 * math.sqrt(k) * th]
    val = 0.0
    edges = sorted(set(pts)) + [math.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        v, _ = integrate.quad(fn, lo, hi, limit=400, epsabs=1e-14, epsrel=1e-12, complex_func=complex_valued)
        val += v
    return val


def diffco_mgf_terms(params: DiffCutoffParams, fit: GammaFit, t) -> tuple[complex, complex]:
    """``(m_in, m_out)``: swap happens / link pair is discarded, weighted by ``e^{t(max + 2a)}``."""
    _check_t(fit, t)
    g = _Gamma(fit)
    tau, a = params.tau, params.a
    if np.imag(t) == 0:
        tr = float(np.real(t))
        m_in = _outer(lambda x: g.pdf(x) * _inner_real(fit, tr, x, x + tau), fit)
        m_out = _outer(lambda x: g.pdf(x) * _inner_real(fit, tr, x + tau, None), fit)
        f = 2 * math.exp(2 * tr * a)
        return complex(f * m_in), complex(f * m_out)
    # complex t: integrate x first (gamma CDF), then y adaptively
    t = complex(t)

    def h(y, which):
        if y <= 0:
            return 0j
        lo = g.cdf(y - tau) if y > tau else 0.0
        w = g.cdf(y) - lo if which == 0 else lo
        return np.exp(t * y + g.logpdf(y)) * w

    m_in = _outer(lambda y: h(y, 0), fit, True)
    m_out = _outer(lambda y: h(y, 1), fit, True)
    f = 2 * np.exp(2 * t * a)
    return f * m_in, f * m_out


def diffco_max_mgf(fit: GammaFit, a: float, t: float) -> float:
    """``E e^{t(max{G1, G2} + 2a)}`` by 2-D quadrature (independent check)."""
    _check_t(fit, t)
    g = _Gamma(fit)
    f = lambda y, x: 2 * math.exp(t * y + g.logpdf(y) + g.logpdf(x)) if x > 0 and y > 0 else 0.0
    v, _ = integrate.dblquad(f, 0, math.inf, lambda x: x, lambda x: math.inf, epsabs=1e-13, epsrel=1e-11)
    return math.exp(2 * t * a) * v


class DiffCutoffModel:
    """MGF and Chernoff bound of the time until the swap starts."""

    def __init__(self, params: DiffCutoffParams):
        self.params = params
        self.fit = diffco_fit(params)
        self._cache = {}
        self._b = None

    def terms(self, t):
        key = complex(t)
        if key not in self._cache:
            self._cache[key] = diffco_mgf_terms(self.params, self.fit, t)
        return self._cache[key]

    def spec(self) -> TrialSpec:
        b = self.fit.abscissa
        succ = MgfEvaluator(lambda t: self.terms(t)[0], b, name="m_in")
        fail = MgfEvaluator(lambda t: self.terms(t)[1], b, name="m_out")
        return TrialSpec(succ, fail, constant_one())

    @property
    def abscissa(self) -> float:
        if self._b is None:
            self._b = convergence_abscissa(self.spec(), rtol=1e-8)
        return self._b

    def mgf(self, t):
        m_in, m_out = self.terms(t)
        if np.real(t) > 0:
            mo_r = self.terms(float(np.real(t)))[1]
            if not (abs(mo_r) < 1):
                raise DivergenceError(f"MGF of W diverges at t={t}")
        return m_in / (1 - m_out)

    def evaluator(self) -> MgfEvaluator:
        return MgfEvaluator(self.mgf, self.abscissa, shift=2 * self.params.a, name="W_diffco")

    def chernoff(self, s, grid_size: int = 64):
        return chernoff_bound(self.evaluator(), s, grid_size)

    def simulate(self, rng, size: int) -> np.ndarray:
        """Direct simulation with gamma link times."""
        k, th, tau, a = self.fit.k, self.fit.theta, self.params.tau, self.params.a
        out = np.zeros(size)
        todo = np.arange(size)
        while todo.size:
            g = rng.gamma(k, th, (todo.size, 2))
            out[todo] += g.max(axis=1) + 2 * a
            todo = todo[np.abs(g[:, 0] - g[:, 1]) > tau]
        return out


def diffco_mgf_W(params: DiffCutoffParams, t):
    return DiffCutoffModel(params).mgf(t)


def diffco_chernoff(params: DiffCutoffParams, s, grid_size: int = 64):
    return DiffCutoffModel(params).chernoff(s, grid_size)


def simulate_link_time(params: DiffCutoffParams, rng, size: int) -> np.ndarray:
    """Exact link completion times ``T`` (geometric number of gen + com pairs)."""
    n = geometric(rng, params.p, size)
    # the 2n exponential parts sum to Gamma(2n, 1/lambda)
    return 2 * params.a * n + rng.gamma(2 * n, 1 / params.lam)
