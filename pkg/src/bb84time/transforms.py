"""Complex-argument numerical kernel.

Heralding time of one elementary link::

    H = sum_{i<=N} T_gen^(i) + sum_{i<N} T_com^(i),   N ~ Geo(p_gen)

It is a geometric compound with closed-form MGF

    S(z) = p M_G(z) / (1 - (1-p) M_G(z) M_C(z)).

The half-plane expectation ``E_eta(t) = E[e^{eta H_A} e^{-(eta-t) H_B} 1{H_B > H_A}]``
is evaluated as a Bromwich integral of ``S(eta - z) S(z - c) / z`` along a
vertical line inside the common strip of convergence (``c = eta - t``).  The
per-term route (Erlang densities summed term by term) is kept as an
independent check.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .config import ShiftedExp
from .errors import DivergenceError, DomainError, NumericalInstabilityError, ParameterError, TruncationWarning
from .rus_core import MgfEvaluator

__all__ = [
    "ShiftedExp", "ShiftedErlangPair", "erlang_tail_sum", "heralding_abscissa", "heralding_mgf",
    "half_plane_expectation", "I_of", "invert_laplace_cdf", "cdf_on_grid", "taylor_moments",
]

INF = math.inf


@dataclass(frozen=True)
class ShiftedErlangPair:
    """``S_G^(l+1) + S_C^(l)``: l+1 generation phases and l heralding phases."""

    gen: ShiftedExp
    com: ShiftedExp
    l: int

    @property
    def shift(self) -> float:
        return (self.l + 1) * self.gen.shift + self.l * self.com.shift

    def mgf(self, z):
        return self.gen.mgf(z) ** (self.l + 1) * self.com.mgf(z) ** self.l


def erlang_tail_sum(shape: int, rate: float, c, x):
    """``int_x^inf e^{-c y} f(y) dy`` for the Erlang(shape, rate) density f.

    Closed form ``e^{-(c+r)x} sum_{j<shape} r^shape/(c+r)^{shape-j} x^j/j!``,
    summed in log space so large shapes and arguments do not overflow.
    """
    if shape < 1 or int(shape) != shape:
        raise ParameterError("shape must be a positive integer")
    c = complex(c)
    cr = c + rate
    if cr.real <= 0:
        raise DomainError("Re(c) + rate must be positive")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ParameterError("x must be >= 0")
    j = np.arange(shape)
    log_cr = np.log(cr)
    with np.errstate(divide="ignore"):
        lx = np.log(x)[..., None]
    # log of the Poisson-type weight e^{-z} z^j / j!, z = (c+r) x
    with np.errstate(invalid="ignore"):
        lt = j * (log_cr + lx) - special.gammaln(j + 1) - cr * x[..., None]
    lt = np.where((x[..., None] == 0) & (j == 0), -cr * 0.0, lt)
    lt = np.where((x[..., None] == 0) & (j > 0), -np.inf, lt)
    out = np.exp(shape * (math.log(rate) - log_cr)) * np.exp(lt).sum(axis=-1)
    return complex(out) if out.ndim == 0 else out


def heralding_abscissa(gen: ShiftedExp, com: ShiftedExp, p_gen: float) -> float:
    """Real root of ``(1-p) M_G(b) M_C(b) = 1``: the abscissa of H."""
    if not (0 < p_gen < 1):
        raise ParameterError("p_gen must lie in (0, 1)")
    lam = min(gen.rate, com.rate)

    def f(t):
        return math.log1p(-p_gen) + gen.log_mgf(t) + com.log_mgf(t)

    return optimize.brentq(f, 0.0, lam * (1 - 1e-15), xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def heralding_mgf(z, gen: ShiftedExp, com: ShiftedExp, p_gen: float, cutoff: int | None = None,
                  centered: bool = False):
    """MGF of H (``cutoff=None``) or of its first ``cutoff+1`` geometric terms.

    ``centered`` returns the MGF of ``H - a_gen`` (H is at least one
    generation phase long).
    """
    g_c = gen.rate / (gen.rate - z)
    g = g_c if centered else np.exp(z * gen.shift) * g_c
    r = (1 - p_gen) * np.exp(z * gen.shift) * g_c * com.mgf(z)
    if cutoff is None:
        return p_gen * g / (1 - r)
    return p_gen * g * (1 - r ** (cutoff + 1)) / (1 - r)


@lru_cache(maxsize=None)
def _gauss_legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def _gl_rule(a: float, b: float, panel: float, order: int):
    x, w = _gauss_legendre(order)
    m = max(1, int(math.ceil((b - a) / panel)))
    e = np.linspace(a, b, m + 1)
    hw = 0.5 * np.diff(e)
    mid = 0.5 * (e[1:] + e[:-1])
    return (mid[:, None] + hw[:, None] * x).ravel(), (hw[:, None] * w).ravel()


@lru_cache(maxsize=4096)
def _abscissa_cached(gen, com, p_gen):
    return heralding_abscissa(gen, com, p_gen)


def _strip(eta, t, b):
    c = eta - t
    lo = max(0.0, eta.real - b)
    hi = c.real + b
    if not hi > lo:
        raise DivergenceError(f"no common strip of convergence for eta={eta}, t={t}")
    return c, 0.5 * (lo + hi), 0.5 * (hi - lo)


def _contour(eta, t, gen, com, p_gen, cutoff, panel=0.5, order=40, ymax=1e9, centered=False):
    # centered=True returns e^{-t a_gen} E_eta(t), since (eta - z) + (z - c) = t
    b = _abscissa_cached(gen, com, p_gen)
    c, sig, d = _strip(eta, t, b)

    def g(y):
        z = sig + 1j * y
        return (heralding_mgf(eta - z, gen, com, p_gen, cutoff, centered)
                * heralding_mgf(z - c, gen, com, p_gen, cutoff, centered) / z)

    # integrand peaks where the line passes the real poles: y = 0 and y = Im c
    umax = math.asinh(ymax / d)
    y1, y2 = sorted((0.0, c.imag))
    if y2 - y1 < 4 * d:
        pieces = [(0.5 * (y1 + y2), -umax, umax)]
    else:
        um = math.asinh(0.5 * (y2 - y1) / d)
        pieces = [(y1, -umax, um), (y2, -um, umax)]
    tot = 0j
    for ctr, ua, ub in pieces:
        u, w = _gl_rule(ua, ub, panel, order)
        tot += np.dot(g(ctr + d * np.sinh(u)), w * d * np.cosh(u))
    return tot / (2 * math.pi)


def _termwise(eta, t, gen, com, p_gen, cutoff, tol=1e-14):
    """Per-term sum with closed-form inner integrals (equal rates only)."""
    if gen.rate != com.rate:
        raise ParameterError("the per-term route needs equal generation and heralding rates")
    lam = gen.rate
    c = eta - t
    if (c + lam).real <= 0:
        raise DivergenceError("inner integral diverges")
    q = 1 - p_gen
    ks = np.arange(cutoff + 1)
    shift_k = (ks + 1) * gen.shift + ks * com.shift
    wk = p_gen * q ** ks * np.exp(-c * shift_k)
    j = np.arange(2 * cutoff + 1)
    lgj = special.gammaln(j + 1)
    cr = c + lam
    log_ratio = math.log(lam) - np.log(cr)
    cum_idx = 2 * ks  # shape 2k+1 sums j = 0..2k

    def inner(x):
        # sum_k w_k E[e^{-c B_k} 1{B_k > x}] at one point x
        y = np.maximum(x - shift_k, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ly = np.log(y)
        with np.errstate(invalid="ignore"):
            lt = j[None, :] * (np.log(cr) + ly[:, None]) - lgj[None, :] - cr * y[:, None]
        lt = np.where((y[:, None] == 0) & (j[None, :] > 0), -np.inf, lt)
        lt = np.where((y[:, None] == 0) & (j[None, :] == 0), 0.0, lt)
        cs = np.cumsum(np.exp(lt), axis=1)
        tail = np.exp((2 * ks + 1) * log_ratio) * cs[ks, cum_idx]
        return np.dot(wk, tail)

    total = 0j
    for l in range(cutoff + 1):
        wl = p_gen * q ** l
        if wl < tol * max(abs(total), 1e-300) and l > 0:
            break
        shape = 2 * l + 1
        sh = (l + 1) * gen.shift + l * com.shift
        mean = shape / lam
        sd = math.sqrt(shape) / lam
        logc = shape * math.log(lam) - special.gammaln(shape)

        def f(y, sh=sh, shape=shape, logc=logc):
            val = np.exp(logc + (shape - 1) * math.log(y) - lam * y + eta * (y + sh)) * inner(y + sh) if y > 0 else 0.0
            return np.array([val.real, val.imag]) if isinstance(val, complex) else np.array([val, 0.0])

        res = 0j
        edges = sorted(set([0.0, max(mean - 8 * sd, 0.0), mean, mean + 8 * sd])) + [INF]
        for a, bb in zip(edges[:-1], edges[1:]):
            r, _ = integrate.quad_vec(f, a, bb, epsabs=1e-15, epsrel=1e-12, limit=400)
            res += complex(r[0], r[1])
        total += wl * res
    return total


def half_plane_expectation(eta, t, gen: ShiftedExp, com: ShiftedExp, p_gen: float,
                           cutoff: int | None = 128, method: str = "contour", warn: bool = True):
    """``E[e^{eta H_A} e^{-(eta-t) H_B} 1{H_B > H_A}]`` for IID heralding times.

    Parameters
    ----------
    eta, t : complex
    gen, com : ShiftedExp
        Generation and heralding phase durations.
    p_gen : float
        Per-attempt generation success probability.
    cutoff : int or None
        Keep the terms ``0 <= l, k <= cutoff`` of the geometric double sum.
        ``None`` sums the series exactly.
    method : {"contour", "termwise"}
        ``contour`` integrates the closed-form MGFs along a Bromwich line;
        ``termwise`` integrates each Erlang term (equal rates, small cutoff).

    Returns
    -------
    value : complex
    remainder : float
        ``|E_exact - E_truncated|`` (0 when ``cutoff`` is None).
    """
    if not (0 < p_gen < 1):
        raise ParameterError("p_gen must lie in (0, 1)")
    eta = complex(eta)
    t = complex(t)
    exact = _contour(eta, t, gen, com, p_gen, None)
    if cutoff is None:
        if method == "termwise":
            raise ParameterError("the per-term route needs a finite cutoff")
        return exact, 0.0
    if method == "contour":
        val = _contour(eta, t, gen, com, p_gen, int(cutoff))
    elif method == "termwise":
        val = _termwise(eta, t, gen, com, p_gen, int(cutoff))
    else:
        raise ParameterError(f"unknown method {method!r}")
    rem = abs(exact - val)
    if warn and rem > 1e-8 * max(abs(val), 1e-300):
        warnings.warn(f"truncation at cutoff={cutoff} leaves remainder {rem:.3e} "
                      f"(value {abs(val):.3e})", TruncationWarning, stacklevel=2)
    return val, rem


def _key(t):
    t = complex(t)
    return (t.real, t.imag)


@lru_cache(maxsize=200_000)
def _I_cached(tr, ti, s, gen, com, p_gen, centered):
    # On {V_B > V_A} the exponent is H_A/s + (t - 1/s) H_B + (t - 2/s) C_B with
    # C the final heralding phase; integrating out both C's leaves two
    # half-plane expectations.  A/B symmetry gives the factor 2.
    t = complex(tr, ti)
    lam, a = com.rate, com.shift
    inv_s = 0.0 if s == INF else 1.0 / s
    u = t - 2 * inv_s
    if u.real >= lam:
        raise DivergenceError(f"I(t, s) diverges: Re(t - 2/s) >= lambda_com at t={t}")
    e1 = _contour(complex(inv_s), t, gen, com, p_gen, None, centered=centered)
    e2 = _contour(complex(lam + inv_s), t, gen, com, p_gen, None, centered=centered)
    pre = np.exp(-2 * inv_s * a) if centered else np.exp(u * a)
    return 2 * pre * (lam / (lam - u) * e1 + lam * u / ((lam - u) * (2 * lam - u)) * e2)


def I_of(t, s: float, cfg, centered: bool = False) -> complex:
    """``E[e^{t max(V_A, V_B)} e^{-(|V_A - V_B| + T_CA + T_CB)/s}]``.

    ``V = H + T_C`` with ``T_C`` the final heralding phase; ``s = inf`` drops
    the exponential damping.  ``centered`` multiplies by
    ``exp(-t (a_gen + a_com))``, the floor of ``max(V_A, V_B)``.  Results are
    memoized per ``(t, s)``.
    """
    if not (s > 0):
        raise ParameterError("s must be positive (inf allowed)")
    tr, ti = _key(t)
    return complex(_I_cached(tr, ti, float(s), cfg.gen, cfg.com, cfg.p_gen, bool(centered)))


def I_abscissa(cfg) -> float:
    """Real abscissa of ``I(t, inf)``: the smaller of b_H and the heralding rate."""
    return min(_abscissa_cached(cfg.gen, cfg.com, cfg.p_gen), cfg.com.rate)


# numerical inverse Laplace transform of the CDF

EULER_A = 18.4
EULER_M = 11


def _cdf_transform(mgf: MgfEvaluator, z):
    return mgf.centered(-z) / z


def _continued(mgf: MgfEvaluator, z):
    # analytic continuation, also where Re(-z) lies beyond the abscissa
    t = -z
    v = mgf.centered_fn(t) if mgf.centered_fn is not None else np.exp(-t * mgf.shift) * mgf.fn(t)
    return v / z


def _euler(mgf, x, terms):
    m = EULER_M
    n = max(terms - m, 1)
    k = np.arange(n + m + 1)
    z = (EULER_A + 2j * math.pi * k) / (2 * x)
    vals = np.array([_cdf_transform(mgf, zz) for zz in z])
    a = np.real(vals) * np.where(k % 2 == 0, 1.0, -1.0)
    a[0] *= 0.5
    partial = np.cumsum(a)
    binom = np.array([math.comb(m, j) for j in range(m + 1)]) / 2.0 ** m
    return math.exp(EULER_A / 2) / x * float(np.dot(binom, partial[n:n + m + 1]))


def _talbot(mgf, x, nodes):
    if not mgf.analytic:
        raise DomainError("the Talbot contour needs an analytic continuation of the MGF")
    m = nodes
    r = 2 * m / (5 * x)
    theta = np.arange(1, m) * math.pi / m
    cot = 1 / np.tan(theta)
    z = r * theta * (cot + 1j)
    sigma = theta + (theta * cot - 1) * cot
    vals = np.array([_continued(mgf, zz) for zz in z])
    first = 0.5 * math.exp(r * x) * float(np.real(_continued(mgf, r)))
    rest = np.real(np.exp(x * z) * vals * (1 + 1j * sigma)).sum()
    return r / m * (first + rest)


def invert_laplace_cdf(mgf: MgfEvaluator, s: float, method: str = "euler", nodes: int | None = None,
                       cross_check: bool = False, clamp: bool = True) -> float:
    """CDF at ``s`` from the MGF, inverting ``M(-z)/z``.

    The known support floor ``mgf.shift`` is factored out first, so the CDF is
    exactly 0 at or below it.

    Parameters
    ----------
    method : {"euler", "talbot"}
        Abate-Whitt Euler summation (default 30 terms) or fixed Talbot
        (default 48 nodes).  Talbot needs ``mgf.analytic``.
    cross_check : bool
        Run a second route and raise if the two differ by more than 1e-3.
        The second route is the other method when the MGF is analytic, and
        Euler with 1.5 times the terms otherwise.
    """
    x = float(s) - mgf.shift
    if x <= 0:
        return 0.0
    if method not in ("euler", "talbot"):
        raise ParameterError(f"unknown method {method!r}")
    if method == "euler":
        v = _euler(mgf, x, nodes or 30)
    else:
        v = _talbot(mgf, x, nodes or 48)
    if cross_check:
        if method == "talbot":
            other = _euler(mgf, x, 30)
        elif mgf.analytic:
            other = _talbot(mgf, x, 48)
        else:
            other = _euler(mgf, x, (3 * (nodes or 30)) // 2)
        if not abs(other - v) <= 1e-3:
            raise NumericalInstabilityError(f"inversion routes disagree at s={s}: {v} vs {other}")
    if not np.isfinite(v):
        raise NumericalInstabilityError(f"non-finite inversion result at s={s}")
    return min(1.0, max(0.0, v)) if clamp else v


def cdf_on_grid(mgf: MgfEvaluator, grid, method: str = "euler", nodes: int | None = None, mono_tol: float = 1e-4):
    """CDF on an increasing grid; checks monotonicity before clamping."""
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ParameterError("grid must be strictly increasing")
    raw = np.array([invert_laplace_cdf(mgf, s, method, nodes, clamp=False) for s in grid])
    if np.any(np.diff(raw) < -mono_tol):
        i = int(np.argmin(np.diff(raw)))
        raise NumericalInstabilityError(f"inverted CDF decreases between s={grid[i]} and s={grid[i + 1]}")
    return np.clip(raw, 0.0, 1.0)


def taylor_moments(fn, orders, radius: float, npts: int = 64) -> np.ndarray:
    """Raw moments ``k! [t^k] fn(t)`` from a Cauchy integral on ``|t| = radius``.

    ``fn`` must be analytic on the closed disc; ``radius`` around half the
    abscissa balances aliasing against round-off.
    """
    orders = np.atleast_1d(np.asarray(orders, dtype=int))
    if npts <= orders.max():
        raise ParameterError("npts must exceed the largest order")
    theta = 2 * math.pi * np.arange(npts) / npts
    pts = radius * np.exp(1j * theta)
    vals = np.array([fn(p) for p in pts], dtype=complex)
    coef = np.fft.fft(vals) / npts
    k = orders
    return np.real(coef[k]) * special.factorial(k, exact=False) / radius ** k
