"""Empirical distribution tools used to compare sample batches with the analytic CDF."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .errors import ParameterError


def ecdf(samples, grid) -> np.ndarray:
    """``P_m(X <= s)`` at each grid point."""
    x = np.sort(np.asarray(samples, dtype=float))
    if x.size == 0:
        raise ParameterError("empty sample")
    return np.searchsorted(x, np.asarray(grid, dtype=float), side="right") / x.size


def ecdf_ccdf_ci(samples, grid, level: float = 0.95):
    """Pointwise Wilson interval for the CCDF at each grid point."""
    x = np.asarray(samples, dtype=float)
    m = x.size
    ph = 1 - ecdf(x, grid)
    z = sps.norm.ppf(0.5 + level / 2)
    den = 1 + z * z / m
    ctr = (ph + z * z / (2 * m)) / den
    half = z * np.sqrt(ph * (1 - ph) / m + z * z / (4 * m * m)) / den
    return np.clip(ctr - half, 0, 1), np.clip(ctr + half, 0, 1)


def dkw_halfwidth(m: int, delta: float = 0.01) -> float:
    """``sqrt(ln(2/delta) / (2m))``: simultaneous band at level ``1 - delta``."""
    if m < 1 or not (0 < delta < 1):
        raise ParameterError("need m >= 1 and delta in (0, 1)")
    return math.sqrt(math.log(2 / delta) / (2 * m))


def dkw_band(samples, grid, delta: float = 0.01):
    """``(ecdf, lo, hi)`` with the DKW band clipped to [0, 1]."""
    f = ecdf(samples, grid)
    eps = dkw_halfwidth(np.asarray(samples).size, delta)
    return f, np.clip(f - eps, 0, 1), np.clip(f + eps, 0, 1)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    critical: float
    alpha: float
    pvalue: float

    @property
    def passed(self) -> bool:
        return self.statistic < self.critical

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "critical": self.critical, "alpha": self.alpha,
                "pvalue": self.pvalue, "passed": self.passed}


def ks_critical(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample critical value ``c(alpha) sqrt((n+m)/(nm))``."""
    c = math.sqrt(-math.log(alpha / 2) / 2)
    return c * math.sqrt((n + m) / (n * m))


def ks_two_sample(a, b, alpha: float = 0.01) -> KSResult:
    r = sps.ks_2samp(np.asarray(a, float), np.asarray(b, float))
    return KSResult(float(r.statistic), ks_critical(len(a), len(b), alpha), alpha, float(r.pvalue))


def qq_pairs(a, b, percentiles=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Matched quantiles of two samples at percentiles 0.5, 1.0, ..., 99.5."""
    if percentiles is None:
        percentiles = np.arange(1, 200) * 0.5
    pc = np.asarray(percentiles, dtype=float)
    return pc, np.percentile(a, pc), np.percentile(b, pc)


def auto_grid(floor: float, pilot, points: int = 20, upper_q: float = 99.9) -> np.ndarray:
    """Log-spaced grid from the support floor to a high pilot percentile."""
    hi = float(np.percentile(pilot, upper_q))
    lo = max(floor, 1e-12)
    if not hi > lo:
        raise ParameterError("pilot percentile does not exceed the floor")
    return np.geomspace(lo, hi, points)
