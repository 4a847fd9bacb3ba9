"""Fast synthetic sampler for the BB84 completion time.

Teleportation times are replaced by Coxian phase-type fits (one each for
X | Y=1, X | Y=0 and X) so that an IID sum of k of them costs a constant
number of draws: a binomial thinning cascade followed by one gamma per phase.
Whole attempts are then assembled backwards from the conditional count
distributions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .bb84_analysis import analysis
from .config import HardwareConfig, ShiftedExp
from .errors import ConfigError, FitFailureError, ParameterError
from .rus_core import geometric
from .sim_full import TAG_SYNTH, SampleBatch, run_chunks, sample_rng

FIT_RTOL = 1e-6
MIN_RTOL = 1e-3


@dataclass(frozen=True)
class CoxianPhaseType:
    """``shift`` plus phases Exp(rates[i]); after phase i continue with ``probs[i]``."""

    rates: tuple
    probs: tuple
    shift: float = 0.0

    def __post_init__(self):
        if len(self.rates) < 1 or len(self.probs) != len(self.rates) - 1:
            raise ParameterError("need d rates and d-1 continuation probabilities")
        if any(not (r > 0 and math.isfinite(r)) for r in self.rates):
            raise ParameterError("rates must be positive")
        if any(not (0 <= q <= 1) for q in self.probs):
            raise ParameterError("continuation probabilities must lie in [0, 1]")
        if self.shift < 0:
            raise ParameterError("shift must be >= 0")

    @property
    def d(self) -> int:
        return len(self.rates)

    def reach(self) -> np.ndarray:
        """Probability of entering each phase."""
        return np.concatenate([[1.0], np.cumprod(self.probs)])

    def mean(self) -> float:
        return self.shift + float(np.sum(self.reach() / np.asarray(self.rates)))

    def moments(self, order: int, centered: bool = True) -> np.ndarray:
        """Raw moments of orders 1..order (of the part above the shift by default)."""
        m = _cox_moments(np.asarray(self.rates, float), np.asarray(self.probs, float), order)
        if centered:
            return m
        full = np.concatenate([[1.0], m])
        a = self.shift
        return np.array([sum(math.comb(k, j) * a ** (k - j) * full[j] for j in range(k + 1))
                         for k in range(1, order + 1)])

    def sample(self, rng, size: int) -> np.ndarray:
        """Direct per-unit simulation (used as an oracle for the cascade)."""
        out = np.full(size, self.shift)
        alive = np.ones(size, dtype=bool)
        for i, lam in enumerate(self.rates):
            out[alive] += rng.standard_exponential(int(alive.sum())) / lam
            if i < self.d - 1:
                alive &= rng.random(size) < self.probs[i]
        return out

    def to_dict(self) -> dict:
        return {"rates": list(self.rates), "probs": list(self.probs), "shift": self.shift}

    @classmethod
    def from_dict(cls, d: dict) -> "CoxianPhaseType":
        return cls(tuple(float(x) for x in d["rates"]), tuple(float(x) for x in d["probs"]), float(d["shift"]))


def _cox_moments(lam: np.ndarray, q: np.ndarray, order: int) -> np.ndarray:
    # mu_k = k! alpha (-S)^{-k} 1 with -S upper bidiagonal
    s = np.diag(lam) - np.diag(lam[:-1] * q, 1)
    u = np.linalg.inv(s)
    v = np.ones(lam.size)
    out = np.empty(order)
    for k in range(1, order + 1):
        v = u @ v
        out[k - 1] = math.factorial(k) * v[0]
    return out


@dataclass
class FitReport:
    d_requested: int
    d_used: int
    rel_errors: np.ndarray
    method: str
    attempts: list = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return float(np.max(np.abs(self.rel_errors)))

    @property
    def degraded(self) -> bool:
        return self.d_used < self.d_requested

    def summary(self) -> str:
        tried = ", ".join(f"d={d}: {e:.2e} ({m})" for d, e, m in self.attempts)
        return f"requested d={self.d_requested}, used d={self.d_used}, max rel error {self.max_rel_error:.2e}; {tried}"


def _pade_coxian(mu: np.ndarray, d: int):
    """Exact Coxian through the [d-1/d] Pade approximant, or None.

    The Laplace transform of a d-phase Coxian is N(s)/D(s) with
    ``D = prod(1 + s/lam_i)``, so matching its first 2d-1 moments fixes N and D
    uniquely.  A valid fit needs real negative poles and exit probabilities in
    [0, 1] for some ordering of the phases.
    """
    c = np.array([1.0] + [(-1) ** k * mu[k - 1] / math.factorial(k) for k in range(1, 2 * d)])
    if d == 1:
        return (np.array([1 / mu[0]]), np.array([]))
    a = np.array([[c[k - j] for j in range(1, d + 1)] for k in range(d, 2 * d)])
    try:
        b = np.linalg.solve(a, -c[d:2 * d])
    except np.linalg.LinAlgError:
        return None
    den = np.concatenate([[1.0], b])
    num = np.array([sum(den[j] * c[k - j] for j in range(k + 1)) for k in range(d)])
    roots = np.roots(den[::-1])
    if np.any(np.abs(roots.imag) > 1e-9 * np.abs(roots)) or np.any(roots.real >= 0):
        return None
    lam = -roots.real
    for order in (np.argsort(lam), np.argsort(-lam)):
        res = _exit_probs(lam[order], num)
        if res is not None:
            return res
    if d <= 6:
        import itertools
        for perm in itertools.permutations(range(d)):
            res = _exit_probs(lam[list(perm)], num)
            if res is not None:
                return res
    return None


def _exit_probs(lam: np.ndarray, num: np.ndarray):
    # N(s) = sum_i P_i prod_{j>i} (1 + s/lam_j)
    d = lam.size
    basis = np.zeros((d, d))
    for i in range(d):
        poly = np.array([1.0])
        for j in range(i + 1, d):
            poly = np.convolve(poly, [1.0, 1 / lam[j]])
        basis[:poly.size, i] = poly
    try:
        p = np.linalg.solve(basis, num)
    except np.linalg.LinAlgError:
        return None
    if np.any(p < -1e-10) or abs(p.sum() - 1) > 1e-8:
        return None
    p = np.clip(p, 0, 1)
    surv = np.cumsum(p[::-1])[::-1]
    q = np.where(surv[:-1] > 0, surv[1:] / np.where(surv[:-1] > 0, surv[:-1], 1), 0.0)
    return lam, np.clip(q, 0, 1)


def _lsq_coxian(mu: np.ndarray, d: int, starts: int, seed: int):
    k = 2 * d - 1
    target = np.log(mu[:k])

    def resid(th):
        lam = np.exp(np.clip(th[:d], -50, 50))
        q = 1 / (1 + np.exp(-np.clip(th[d:], -50, 50)))
        with np.errstate(all="ignore"):
            m = _cox_moments(lam, q, k)
            r = np.log(m) - target
        return np.where(np.isfinite(r), r, 1e3)

    rng = np.random.default_rng(seed)
    best = None
    for st in range(starts):
        if st < 4:
            # Erlang-like: equal rates, near-certain continuation
            lam0 = np.full(d, d / mu[0]) * (1 + 0.3 * st * np.linspace(-1, 1, d))
            q0 = np.full(d - 1, 0.9 - 0.1 * st)
        else:
            lam0 = d / mu[0] * np.exp(rng.normal(0, 1.5, d))
            q0 = rng.uniform(0.2, 0.95, d - 1)
        th0 = np.concatenate([np.log(lam0), np.log(q0 / (1 - q0))])
        r = least_squares(resid, th0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=400 * (2 * d))
        err = float(np.max(np.abs(np.expm1(r.fun))))
        if best is None or err < best[0]:
            best = (err, np.exp(np.clip(r.x[:d], -50, 50)), 1 / (1 + np.exp(-np.clip(r.x[d:], -50, 50))))
    return best


def fit_coxian(moments, shift: float, d: int = 7, starts: int = 32, seed: int = 0,
               rtol: float = FIT_RTOL) -> tuple[CoxianPhaseType, FitReport]:
    """Match the first 2d-1 raw moments of a shifted target.

    Parameters
    ----------
    moments : sequence of float
        Raw moments ``E Z^k``, k = 1..2d-1, of the target (including its shift).
    shift : float
        Deterministic part; the phases model ``Z - shift``.

    Notes
    -----
    The fit runs on moments normalized by the mean.  Damped least squares on
    log moment ratios with multi-start is tried first; the exact Pade solution
    is used when it exists and is more accurate.  If neither reaches ``rtol``,
    the phase count drops by one, down to d = 2.
    """
    mom = np.asarray(moments, dtype=float)
    if d < 1:
        raise ParameterError("d must be >= 1")
    if mom.size < 2 * d - 1:
        raise ParameterError(f"need {2 * d - 1} moments for d={d}")
    if not (mom[0] > shift):
        raise ParameterError("first moment must exceed the shift")
    full = np.concatenate([[1.0], mom])
    # moments of Z - shift, then normalized by its mean
    cen = np.array([sum(math.comb(k, j) * (-shift) ** (k - j) * full[j] for j in range(k + 1))
                    for k in range(1, mom.size + 1)])
    m = cen[0]
    mun = cen / m ** np.arange(1, mom.size + 1)
    attempts = []
    for dd in range(d, 0 if d == 1 else 1, -1):
        k = 2 * dd - 1
        cands = []
        pade = _pade_coxian(mun, dd)
        if pade is not None:
            lam, q = pade
            e = np.max(np.abs(_cox_moments(lam, q, k) / mun[:k] - 1))
            cands.append((float(e), lam, q, "pade"))
        if dd > 1:
            e, lam, q = _lsq_coxian(mun, dd, starts, seed)
            cands.append((e, lam, q, "lsq"))
        if not cands:
            attempts.append((dd, math.inf, "none"))
            continue
        err, lam, q, how = min(cands, key=lambda c: c[0])
        attempts.append((dd, err, how))
        if err <= rtol or dd <= 2:
            cox = CoxianPhaseType(tuple(float(x) / m for x in lam), tuple(float(x) for x in q), float(shift))
            rel = cox.moments(k, centered=False) / mom[:k] - 1
            if dd <= 2 and err > rtol and np.max(np.abs(rel[:3])) > MIN_RTOL:
                raise FitFailureError("even d=2 misses the first three moments by more than 1e-3")
            return cox, FitReport(d, dd, rel, how, attempts)
    raise FitFailureError("no Coxian fit found")  # pragma: no cover


def sample_coxian_iid_sum(cox: CoxianPhaseType, k: int, rng) -> float:
    """Sum of k IID copies via binomial thinning and one gamma per phase."""
    if k < 0:
        raise ParameterError("k must be >= 0")
    total = k * cox.shift
    dl = int(k)
    for i, lam in enumerate(cox.rates):
        if dl == 0:
            break
        total += rng.gamma(dl, 1 / lam)
        if i < cox.d - 1:
            dl = int(rng.binomial(dl, cox.probs[i]))
    return float(total)


def _cascade_many(fits, ks, rng, counter=None) -> float:
    """Several cascades advanced stage by stage, one vectorized draw per stage.

    The stage-1 gamma counts one draw; each later stage counts two (its
    binomial thinning and its gamma).
    """
    d = max(f.d for f in fits)
    dl = np.asarray(ks, dtype=np.int64)
    total = float(sum(k * f.shift for k, f in zip(ks, fits)))
    for i in range(d):
        if i > 0:
            q = np.array([f.probs[i - 1] if i < f.d else 0.0 for f in fits])
            dl = rng.binomial(dl, q)
        lam = np.array([f.rates[i] if i < f.d else 1.0 for f in fits])
        g = rng.gamma(np.maximum(dl, 1), 1 / lam)
        total += float(np.sum(np.where(dl > 0, g, 0.0)))
        if counter is not None:
            counter[0] += 1 if i == 0 else 2
    return total


@dataclass(frozen=True)
class CountTable:
    """Flattened cumulative table of ``P(N_S = s, N_F = f | U = u)``."""

    s: np.ndarray
    f: np.ndarray
    cdf: np.ndarray

    @classmethod
    def from_matrix(cls, tab: np.ndarray) -> "CountTable":
        s, f = np.nonzero(tab > 0)
        p = tab[s, f]
        cdf = np.cumsum(p)
        cdf /= cdf[-1]
        return cls(s, f, cdf)

    def matrix(self, size: int) -> np.ndarray:
        out = np.zeros((size, size))
        p = np.diff(np.concatenate([[0.0], self.cdf]))
        out[self.s, self.f] = p
        return out


def sample_counts(u: int, tables, rng, size=None):
    """``(n_s, n_f)`` by inverse CDF on the table for ``U = u``."""
    tab = tables[u]
    x = rng.random(size)
    i = np.minimum(np.searchsorted(tab.cdf, x, side="right"), tab.cdf.size - 1)
    if size is None:
        return int(tab.s[i]), int(tab.f[i])
    return tab.s[i], tab.f[i]


@dataclass
class SynthModel:
    fit_success: CoxianPhaseType
    fit_failure: CoxianPhaseType
    fit_uncond: CoxianPhaseType
    p1: float
    count_tables: tuple
    kc_params: ShiftedExp
    n: int
    config_hash: str
    reports: dict = field(default_factory=dict)

    @classmethod
    def build(cls, cfg: HardwareConfig, d: int = 7, starts: int = 32, seed: int = 0) -> "SynthModel":
        an = analysis(cfg)
        k = 2 * d - 1
        fits, reps = {}, {}
        for kind in ("success", "failure", "unconditional"):
            mom = np.array([an.moments_of_X(kind, j) for j in range(1, k + 1)])
            fits[kind], reps[kind] = fit_coxian(mom, cfg.a_W, d, starts, seed)
        tables = (CountTable.from_matrix(an.cond_counts_table(0)), CountTable.from_matrix(an.cond_counts_table(1)))
        return cls(fits["success"], fits["failure"], fits["unconditional"], an.p1(), tables,
                   cfg.ab, cfg.n, cfg.config_hash(), reps)

    def to_json(self) -> str:
        doc = {
            "config_hash": self.config_hash,
            "n": self.n,
            "p1": self.p1,
            "kc": {"rate": self.kc_params.rate, "shift": self.kc_params.shift},
            "fit_success": self.fit_success.to_dict(),
            "fit_failure": self.fit_failure.to_dict(),
            "fit_uncond": self.fit_uncond.to_dict(),
            "count_tables": [{"s": t.s.tolist(), "f": t.f.tolist(), "cdf": t.cdf.tolist()} for t in self.count_tables],
            "fit_reports": {k: r.summary() for k, r in self.reports.items()},
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str, cfg: HardwareConfig | None = None) -> "SynthModel":
        doc = json.loads(text)
        if cfg is not None and doc["config_hash"] != cfg.config_hash():
            raise ConfigError("synthetic model was built for a different configuration")
        tabs = tuple(CountTable(np.array(t["s"]), np.array(t["f"]), np.array(t["cdf"])) for t in doc["count_tables"])
        return cls(CoxianPhaseType.from_dict(doc["fit_success"]), CoxianPhaseType.from_dict(doc["fit_failure"]),
                   CoxianPhaseType.from_dict(doc["fit_uncond"]), float(doc["p1"]), tabs,
                   ShiftedExp(doc["kc"]["rate"], doc["kc"]["shift"]), int(doc["n"]), doc["config_hash"])


def synthetic_W_n(model: SynthModel, cfg: HardwareConfig, rng, counter=None) -> float:
    """One completion time by backwards assembly of whole attempts.

    ``counter`` (a one-element list) accumulates the primitive draws: the
    attempt count, two per (S, F) pair, the cascades and the final gamma.
    """
    return _synthetic_draw(model, rng, [0] if counter is None else counter)[0]


def _synthetic_draw(model: SynthModel, rng, ctr):
    n_att = geometric(rng, model.p1)
    ctr[0] += 1
    s, f = sample_counts(1, model.count_tables, rng)
    ctr[0] += 2
    if n_att > 1:
        s0, f0 = sample_counts(0, model.count_tables, rng, n_att - 1)
        s += int(s0.sum())
        f += int(f0.sum())
        ctr[0] += 2 * (n_att - 1)
    rest = model.n * n_att - s - f
    total = _cascade_many((model.fit_success, model.fit_failure, model.fit_uncond), (s, f, rest), rng, ctr)
    kc = model.kc_params
    total += n_att * kc.shift + rng.gamma(n_att, 1 / kc.rate)
    ctr[0] += 1
    return total, n_att


def synth_draws_formula(d: int, p1: float) -> float:
    return 2 * d + 1 + 2 / p1


def _synth_chunk(args):
    (_, model), seed, lo, hi = args
    t = np.empty(hi - lo)
    a = np.empty(hi - lo, dtype=np.int64)
    dr = np.empty(hi - lo, dtype=np.int64)
    for j, i in enumerate(range(lo, hi)):
        rng = sample_rng(seed, i, TAG_SYNTH)
        ctr = [0]
        t[j], a[j] = _synthetic_draw(model, rng, ctr)
        dr[j] = ctr[0]
    return t, a, dr


def synth_batch(model: SynthModel, cfg: HardwareConfig, seed: int, samples: int, workers: int = 1) -> SampleBatch:
    t, a, d = run_chunks(_synth_chunk, (cfg, model), seed, samples, workers, chunk=20000)
    return SampleBatch("synthetic", seed, t, a, d, cfg.config_hash())
