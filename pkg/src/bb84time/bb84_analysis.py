"""Analytic completion-time distribution of BB84 over one repeater.

One qubit teleportation takes ``X = T_gamma + max(V_A, V_B) + T_C' + T_C''``
and succeeds (``Y = 1``) with probability ``p_Lambda(w, T_C'')``.  An attempt
teleports n qubits, samples ``ceil(alpha B)`` of the ``B ~ Bin(n, 1/2)``
basis-matched qubits and succeeds when a fraction of at least beta of the
sample was received correctly.  Each attempt ends with reconciliation ``K_C``.

Most quantities are evaluated in centered form (the deterministic floor of
the variable factored out) so that the Laplace inversion never forms
``exp(t * floor)`` for large ``|t|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np
from scipy import stats

from . import transforms
from .config import HardwareConfig, ShiftedExp
from .errors import DivergenceError, DomainError, ParameterError
from .rus_core import MgfEvaluator, TrialSpec, chernoff_bound, convergence_abscissa, constant_one

INF = math.inf


def p_lambda(w, tc2, cfg: HardwareConfig):
    """Teleportation success probability given the resource and T-COMM delay."""
    w = np.asarray(w, dtype=float)
    tc2 = np.asarray(tc2, dtype=float)
    out = (2 + w * np.exp(-tc2 / cfg.t_da) + w * np.exp(-tc2 * (1 / cfg.t_de + 1 / (2 * cfg.t_da)))) / 4
    return float(out) if out.ndim == 0 else out


def _se_c(se: ShiftedExp, t):
    # centered SE mgf: the shift is accounted for by the caller
    return se.rate / (se.rate - t)


@dataclass(frozen=True)
class QubitMgfTriple:
    """``m1 = E e^{tX} Y``, ``m0 = E e^{tX} (1 - Y)``, ``mx = E e^{tX}``."""

    m1: MgfEvaluator
    m0: MgfEvaluator
    mx: MgfEvaluator


def check_sample_weights(cfg: HardwareConfig) -> np.ndarray:
    """``P(B_1 = k)`` for k = 0..ceil(alpha n), exactly.

    ``B_1 = ceil(alpha B)`` equals k iff ``(k-1)/alpha < B <= k/alpha``; the
    ceiling is taken on exact rationals.
    """
    return np.array([float(x) for x in _check_sample_weights_exact(cfg.n, cfg.alpha_q)])


@lru_cache(maxsize=256)
def _check_sample_weights_exact(n: int, alpha: Fraction):
    k_max = math.ceil(alpha * n)
    acc = [0] * (k_max + 1)
    for j in range(n + 1):
        acc[math.ceil(alpha * j)] += math.comb(n, j)
    den = 2 ** n
    return tuple(Fraction(a, den) for a in acc)


def threshold(k: int, beta: Fraction) -> int:
    """``ceil(beta k)``: correct receptions needed in a check sample of size k."""
    return math.ceil(beta * k)


class BB84Analysis:
    """Analytic model for one configuration.  Evaluations are memoized."""

    def __init__(self, cfg: HardwareConfig):
        self.cfg = cfg
        self._cache = {}
        self.weights = check_sample_weights(cfg)
        self.b_I = transforms.I_abscissa(cfg)
        self._b_X = None
        self._b_W = None

    # I(t, s) in centered form: floor a_gen + a_com factored out
    def I_c(self, t, s):
        return transforms.I_of(t, s, self.cfg, centered=True)

    def _tg_product(self, t):
        cfg = self.cfg
        floor = cfg.swap.shift + cfg.gen.shift + cfg.com.shift
        return (1 - cfg.p_swap) * np.exp(t * floor) * _se_c(cfg.swap, t) * self.I_c(t, INF)

    def mgf_T_gamma(self, t):
        """MGF of the total time spent in failed swap attempts."""
        cfg = self.cfg
        if cfg.p_swap == 1:
            return 1.0 + 0j
        if np.real(t) >= min(self.b_I, cfg.swap.rate):
            raise DivergenceError(f"T_gamma mgf diverges at t={t}")
        q = self._tg_product(t)
        if np.real(t) > 0:
            q_r = self._tg_product(float(np.real(t)))
            if not (abs(q_r) < 1):
                raise DivergenceError(f"T_gamma mgf diverges at t={t}")
        return cfg.p_swap / (1 - q)

    def _key(self, t):
        t = complex(t)
        return (t.real, t.imag)

    def qubit_terms_c(self, t):
        """Centered ``(m1, mx)``: both multiplied by ``exp(-t a_W)``."""
        key = ("q",) + self._key(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        cfg = self.cfg
        t = complex(t)
        if t.real >= self.abscissa_X:
            raise DivergenceError(f"qubit mgf diverges at t={t}")
        mtg = self.mgf_T_gamma(t)
        i_inf = self.I_c(t, INF)
        i_tc = self.I_c(t, cfg.t_c)
        ms = _se_c(cfg.swap, t)
        mab = _se_c(cfg.ab, t)
        ms_c = math.exp(-cfg.swap.shift / cfg.t_c) * _se_c(cfg.swap, t - 1 / cfg.t_c)
        r1 = 1 / cfg.t_da
        r2 = 1 / cfg.t_de + 1 / (2 * cfg.t_da)
        mab1 = math.exp(-cfg.ab.shift * r1) * _se_c(cfg.ab, t - r1)
        mab2 = math.exp(-cfg.ab.shift * r2) * _se_c(cfg.ab, t - r2)
        m1 = 0.25 * mtg * (2 * i_inf * ms * mab + cfg.w0 ** 2 * i_tc * ms_c * (mab1 + mab2))
        mx = mtg * i_inf * ms * mab
        out = (complex(m1), complex(mx))
        self._cache[key] = out
        return out

    def m1(self, t):
        m1c, _ = self.qubit_terms_c(t)
        return np.exp(t * self.cfg.a_W) * m1c

    def mx(self, t):
        _, mxc = self.qubit_terms_c(t)
        return np.exp(t * self.cfg.a_W) * mxc

    def m0(self, t):
        m1c, mxc = self.qubit_terms_c(t)
        return np.exp(t * self.cfg.a_W) * (mxc - m1c)

    @property
    def abscissa_X(self) -> float:
        if self._b_X is None:
            cfg = self.cfg
            if cfg.p_swap == 1:
                b = min(self.b_I, cfg.swap.rate)
            else:
                one = constant_one()
                fail = MgfEvaluator(lambda t: self._tg_product(t), min(self.b_I, cfg.swap.rate))
                succ = MgfEvaluator(lambda t: cfg.p_swap + 0 * t, INF)
                b = convergence_abscissa(TrialSpec(succ, fail, one))
            self._b_X = min(b, cfg.ab.rate)
        return self._b_X

    def triple(self) -> QubitMgfTriple:
        b = self.abscissa_X
        a = self.cfg.a_W
        return QubitMgfTriple(
            m1=MgfEvaluator(self.m1, b, shift=a, name="m1", centered_fn=lambda t: self.qubit_terms_c(t)[0]),
            m0=MgfEvaluator(self.m0, b, shift=a, name="m0",
                            centered_fn=lambda t: self.qubit_terms_c(t)[1] - self.qubit_terms_c(t)[0]),
            mx=MgfEvaluator(self.mx, b, shift=a, name="mx", centered_fn=lambda t: self.qubit_terms_c(t)[1]),
        )

    # attempt-level terms, centered by exp(-t n a_W)
    def D_n_c(self, t):
        key = ("D",) + self._key(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        cfg = self.cfg
        m1c, mxc = self.qubit_terms_c(t)
        m0c = mxc - m1c
        beta = cfg.beta_q
        tot = 0j
        for k in range(1, cfg.k_max + 1):
            wk = self.weights[k]
            if wk == 0:
                continue
            tot += m1_closed(m0c, m1c, k, threshold(k, beta)) * mxc ** (cfg.n - k) * wk
        self._cache[key] = tot
        return tot

    def D_n(self, t):
        return np.exp(t * self.cfg.n * self.cfg.a_W) * self.D_n_c(t)

    def _attempt_c(self, t):
        d = self.D_n_c(t)
        _, mxc = self.qubit_terms_c(t)
        return d, mxc ** self.cfg.n - d

    def _spec_v1(self) -> TrialSpec:
        cfg = self.cfg
        b = self.abscissa_X
        na = cfg.n * cfg.a_W
        succ = MgfEvaluator(lambda t: np.exp(t * na) * self._attempt_c(t)[0], b)
        fail = MgfEvaluator(lambda t: np.exp(t * na) * self._attempt_c(t)[1], b)
        comm = MgfEvaluator(cfg.ab.mgf, cfg.ab.rate)
        return TrialSpec(succ, fail, comm)

    @property
    def abscissa_W(self) -> float:
        if self._b_W is None:
            self._b_W = convergence_abscissa(self._spec_v1())
        return self._b_W

    def mgf_W_v1_c(self, t):
        """Centered MGF of ``W_n - floor``."""
        cfg = self.cfg
        t = complex(t)
        if t.real >= self.abscissa_W:
            raise DivergenceError(f"completion-time mgf diverges at t={t}")
        d, f = self._attempt_c(t)
        kc = _se_c(cfg.ab, t)
        return kc * d / (1 - np.exp(t * cfg.floor) * kc * f)

    def mgf_W_v1(self, t):
        return np.exp(complex(t) * self.cfg.floor) * self.mgf_W_v1_c(t)

    def mgf_W_v0(self, t, c: int | None = None):
        cfg = self.cfg
        if c is None:
            c = math.ceil(cfg.beta_q * cfg.n)
        if not (0 <= c <= cfg.n):
            raise ParameterError("c must lie in 0..n")
        m1c, mxc = self.qubit_terms_c(t)
        m1_ = m1_closed(mxc - m1c, m1c, cfg.n, c)
        m0_ = mxc ** cfg.n - m1_
        kc = _se_c(cfg.ab, t)
        g = np.exp(complex(t) * cfg.floor)
        fail_r = None
        if np.real(t) > 0:
            tr = float(np.real(t))
            a1, ax = self.qubit_terms_c(tr)
            fr = ax ** cfg.n - m1_closed(ax - a1, a1, cfg.n, c)
            fail_r = math.exp(tr * cfg.floor) * _se_c(cfg.ab, tr) * fr
            if not (abs(fail_r) < 1):
                raise DivergenceError(f"V0 completion-time mgf diverges at t={t}")
        return g * kc * m1_ / (1 - g * kc * m0_)

    def W_evaluator(self) -> MgfEvaluator:
        return MgfEvaluator(self.mgf_W_v1, self.abscissa_W, shift=self.cfg.floor, name="W_n",
                            centered_fn=self.mgf_W_v1_c)

    def cdf_W_v1(self, s, method="euler", nodes=None):
        return transforms.invert_laplace_cdf(self.W_evaluator(), s, method=method, nodes=nodes)

    def cdf_grid(self, grid, nodes=None):
        return transforms.cdf_on_grid(self.W_evaluator(), grid, "euler", nodes)

    def chernoff_W_v1(self, s, grid_size=64):
        return chernoff_bound(self.W_evaluator(), s, grid_size)

    # probabilities at t = 0
    @property
    def p_Y(self) -> float:
        return float(np.real(self.qubit_terms_c(0.0)[0]))

    def p1(self) -> float:
        cfg = self.cfg
        m = self.p_Y
        beta = cfg.beta_q
        tot = 0.0
        for k in range(1, cfg.k_max + 1):
            tot += stats.binom.sf(threshold(k, beta) - 1, k, m) * self.weights[k]
        return float(tot)

    def cond_counts_table(self, u: int) -> np.ndarray:
        """``P(N_S = s, N_F = f | U = u)`` as an array indexed ``[s, f]``."""
        cfg = self.cfg
        km = cfg.k_max
        p1 = self.p1()
        if u == 1 and p1 <= 0 or u == 0 and p1 >= 1:
            raise ParameterError("conditional count distribution undefined: p1 in {0, 1}")
        m = self.p_Y
        bq = cfg.beta_q
        tab = np.zeros((km + 1, km + 1))
        # k = 0 leaves nothing to check: S = F = 0 and the round fails
        for k in range(0, km + 1):
            pmf = stats.binom.pmf(np.arange(k + 1), k, m) * self.weights[k]
            for s in range(k + 1):
                ok = k >= 1 and s * bq.denominator >= bq.numerator * k
                if ok == (u == 1):
                    tab[s, k - s] = pmf[s]
        return tab / (p1 if u == 1 else 1 - p1)

    def cond_counts_pmf(self, s: int, f: int, u: int) -> float:
        km = self.cfg.k_max
        if u not in (0, 1):
            raise ParameterError("u must be 0 or 1")
        if s < 0 or f < 0 or s + f > km:
            return 0.0
        return float(self.cond_counts_table(u)[s, f])

    # moments
    def centered_moments(self, kind: str, orders, npts: int = 64, radius: float | None = None):
        """Raw moments of ``X - a_W`` (or its conditional versions)."""
        p = self.p_Y
        if kind == "unconditional":
            fn = lambda t: self.qubit_terms_c(t)[1]
            norm = 1.0
        elif kind == "success":
            if not (0 < p):
                raise ParameterError("conditioning on Y=1 with P(Y=1)=0")
            fn = lambda t: self.qubit_terms_c(t)[0]
            norm = p
        elif kind == "failure":
            if not (p < 1):
                raise ParameterError("conditioning on Y=0 with P(Y=1)=1")
            fn = lambda t: self.qubit_terms_c(t)[1] - self.qubit_terms_c(t)[0]
            norm = 1 - p
        else:
            raise ParameterError(f"unknown kind {kind!r}")
        r = 0.5 * self.abscissa_X if radius is None else radius
        return transforms.taylor_moments(fn, orders, r, npts) / norm

    def moments_of_X(self, kind: str, order: int) -> float:
        if not (1 <= order <= 13):
            raise ParameterError("order must lie in 1..13")
        mu = np.concatenate([[1.0], self.centered_moments(kind, np.arange(1, order + 1))])
        a = self.cfg.a_W
        return float(sum(math.comb(order, j) * a ** (order - j) * mu[j] for j in range(order + 1)))


def m1_closed(m0, m1, l: int, j: int):
    """``E[e^{t sum X} 1{sum Y >= j}]`` over l qubits, in closed form."""
    if l < 1 or not (0 <= j <= l):
        raise IndexError(f"need 0 <= j <= l and l >= 1, got l={l}, j={j}")
    if j == 0:
        return (m0 + m1) ** l
    if j == l:
        return m1 ** l
    if j == l - 1:
        return m1 ** l + l * m0 * m1 ** (l - 1)
    tot = sum(math.comb(l - k, j) * m0 ** (l - k - j) * m1 ** (j + k) for k in (0, 1))
    s = m0 + m1
    tot += m1 * sum(s ** (l - 1 - k) * math.comb(k, j) * m0 ** (k - j) * m1 ** j for k in range(j, l - 1))
    return tot


def m1_recursive(t, l: int, j: int, triple: QubitMgfTriple):
    """``M^(1)(t; l, j)`` from a qubit triple."""
    return m1_closed(triple.m0(t), triple.m1(t), l, j)


def m0_recursive(t, l: int, j: int, triple: QubitMgfTriple):
    """``M^(0)(t; l, j) = (m0 + m1)^l - M^(1)(t; l, j)``."""
    m0, m1 = triple.m0(t), triple.m1(t)
    return (m0 + m1) ** l - m1_closed(m0, m1, l, j)


def m1_dp(m0, m1, l: int, j: int):
    """Same quantity from the recurrence ``a_{l,j} = m0 a_{l-1,j} + m1 a_{l-1,j-1}``."""
    if l < 1 or not (0 <= j <= l):
        raise IndexError("need 0 <= j <= l")
    a = [m0 + m1, m1]
    for ll in range(2, l + 1):
        nxt = [(m0 + m1) ** ll]
        for jj in range(1, ll):
            nxt.append(m0 * a[jj] + m1 * a[jj - 1])
        nxt.append(m1 ** ll)
        a = nxt
    return a[j]


@lru_cache(maxsize=64)
def analysis(cfg: HardwareConfig) -> BB84Analysis:
    """Shared model per configuration."""
    return BB84Analysis(cfg)


# functional interface

def mgf_T_gamma(t, cfg):
    return analysis(cfg).mgf_T_gamma(t)


def qubit_mgfs(cfg) -> QubitMgfTriple:
    return analysis(cfg).triple()


def D_n(t, cfg, triple=None):
    return analysis(cfg).D_n(t)


def mgf_W_v1(t, cfg):
    return analysis(cfg).mgf_W_v1(t)


def mgf_W_v0(t, cfg, c=None):
    return analysis(cfg).mgf_W_v0(t, c)


def cdf_W_v1(s, cfg, method="euler", nodes=None):
    return analysis(cfg).cdf_W_v1(s, method, nodes)


def chernoff_W_v1(s, cfg, grid_size=64):
    return analysis(cfg).chernoff_W_v1(s, grid_size)


def p1(cfg) -> float:
    return analysis(cfg).p1()


def cond_counts_pmf(s, f, u, cfg) -> float:
    return analysis(cfg).cond_counts_pmf(s, f, u)


def moments_of_X(kind, order, cfg) -> float:
    return analysis(cfg).moments_of_X(kind, order)
