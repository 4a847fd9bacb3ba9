"""Repeat-until-success algebra.

A trial of random duration U succeeds with a probability that may depend on
latent variables of the trial.  On failure it is restarted after a
communication phase T_C.  The completion time W is a geometric compound and
its MGF follows from the two expectation terms

    success(t) = E[e^{tU} p(L)],   failure(t) = E[e^{tU} (1 - p(L))].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateProtocolError, DivergenceError, DomainError, ParameterError


@dataclass(frozen=True)
class MgfEvaluator:
    """Partial map ``t -> E exp(tZ)`` with its real convergence abscissa.

    Parameters
    ----------
    fn : callable
        Complex argument to complex value.  May raise ``DomainError`` where the
        transform is undefined.
    abscissa_b : float
        ``sup{t real : E exp(tZ) < inf}``, possibly ``inf``.
    shift : float
        Known lower bound of the support.  Inversion works with ``Z - shift``.
    analytic : bool
        True when ``fn`` is a closed-form analytic continuation valid on the
        whole plane minus isolated singularities.  Contour methods that sweep
        far beyond the abscissa (Talbot) require this.
    """

    fn: Callable
    abscissa_b: float
    shift: float = 0.0
    analytic: bool = False
    name: str = field(default="", compare=False)
    centered_fn: Callable | None = field(default=None, compare=False)

    def __call__(self, t):
        if np.isscalar(t) and np.real(t) >= self.abscissa_b:
            raise DivergenceError(f"{self.name or 'mgf'} diverges at t={t} (abscissa {self.abscissa_b})")
        return self.fn(t)

    def centered(self, t):
        """MGF of ``Z - shift``; avoids under/overflow of ``exp(t*shift)``."""
        if np.isscalar(t) and np.real(t) >= self.abscissa_b:
            raise DivergenceError(f"{self.name or 'mgf'} diverges at t={t} (abscissa {self.abscissa_b})")
        if self.centered_fn is not None:
            return self.centered_fn(t)
        return np.exp(-t * self.shift) * self.fn(t)


def constant_one() -> MgfEvaluator:
    """Evaluator of a zero-duration phase."""
    return MgfEvaluator(lambda t: 1.0 + 0.0 * t, math.inf, analytic=True, name="one")


def shifted_exp_mgf(rate: float, shift: float = 0.0) -> MgfEvaluator:
    return MgfEvaluator(lambda t: np.exp(t * shift) * rate / (rate - t), rate,
                        shift=shift, analytic=True, name=f"SE({rate},{shift})",
                        centered_fn=lambda t: rate / (rate - t))


@dataclass(frozen=True)
class TrialSpec:
    """One trial of a failure-prone protocol.

    ``success_term(0) + failure_term(0)`` is 1 and ``comm_mgf(0)`` is 1.
    """

    success_term: MgfEvaluator
    failure_term: MgfEvaluator
    comm_mgf: MgfEvaluator

    @classmethod
    def constant_p(cls, p: float, trial: MgfEvaluator, comm: MgfEvaluator | None = None) -> "TrialSpec":
        """Trial whose success probability does not depend on its duration."""
        if not (0 < p <= 1):
            raise ParameterError(f"p must lie in (0, 1], got {p}")
        s = MgfEvaluator(lambda t: p * trial.fn(t), trial.abscissa_b, trial.shift, trial.analytic)
        f = MgfEvaluator(lambda t: (1 - p) * trial.fn(t), trial.abscissa_b, trial.shift, trial.analytic)
        return cls(s, f, comm or constant_one())


def compose_rus_mgf(spec: TrialSpec, t):
    """MGF of the completion time, ``C S / (1 - C F)``, at complex ``t``.

    Raises
    ------
    DivergenceError
        If ``|C(Re t) F(Re t)| >= 1`` or a component is undefined at ``t``.
    """
    try:
        c = spec.comm_mgf(t)
        s = spec.success_term(t)
        f = spec.failure_term(t)
    except (ZeroDivisionError, FloatingPointError, OverflowError) as exc:
        raise DomainError(f"component undefined at t={t}: {exc}") from None
    tr = float(np.real(t))
    if tr <= 0:
        # |C F|(t) <= C(0) F(0) < 1 on the closed left half-plane
        cf_r = 0.0 if spec.failure_term.fn(0.0) < 1 else 1.0
    elif np.imag(t) != 0:
        cf_r = spec.comm_mgf(tr) * spec.failure_term(tr)
    else:
        cf_r = c * f
    if not np.isfinite(cf_r) or abs(cf_r) >= 1:
        raise DivergenceError(f"geometric series diverges at Re t={tr} (C*F = {cf_r})")
    return c * s / (1 - c * f)


def rus_mgf(spec: TrialSpec, abscissa: float | None = None, shift: float = 0.0, analytic=False) -> MgfEvaluator:
    """Wrap ``compose_rus_mgf`` as an evaluator."""
    b = convergence_abscissa(spec) if abscissa is None else abscissa
    return MgfEvaluator(lambda t: compose_rus_mgf(spec, t), b, shift=shift, analytic=analytic)


def _product_below_one(spec: TrialSpec, t: float) -> bool:
    try:
        v = float(np.real(spec.comm_mgf(t) * spec.failure_term(t)))
    except (DomainError, ZeroDivisionError, FloatingPointError, OverflowError):
        return False
    return np.isfinite(v) and 0 <= v < 1


def convergence_abscissa(spec: TrialSpec, rtol: float = 1e-10, max_iter: int = 200) -> float:
    """Supremum of real ``t >= 0`` where ``C(t) F(t) < 1`` and all parts are finite.

    Raises
    ------
    DegenerateProtocolError
        If the trial never succeeds (``F(0) >= 1``).
    """
    f0 = float(np.real(spec.failure_term(0.0)))
    if f0 >= 1 - 1e-15:
        raise DegenerateProtocolError("failure_term(0) >= 1: the trial never succeeds")
    b_comp = min(spec.success_term.abscissa_b, spec.failure_term.abscissa_b, spec.comm_mgf.abscissa_b)
    if not math.isfinite(b_comp):
        hi = 1.0
        for _ in range(max_iter):
            if not _product_below_one(spec, hi):
                break
            hi *= 2.0
        else:
            return math.inf
    else:
        # the product may stay below one right up to the component abscissa
        t_probe = b_comp * (1 - 1e-12)
        if _product_below_one(spec, t_probe):
            return b_comp
        hi = b_comp
    lo = hi
    for _ in range(max_iter):
        lo *= 0.5
        if _product_below_one(spec, lo):
            break
    else:
        return 0.0
    for _ in range(max_iter):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if _product_below_one(spec, mid):
            lo = mid
        else:
            hi = mid
    return lo


def chernoff_grid(b: float, grid_size: int = 64, g_max: float = 0.999, upper_frac: float = 0.8) -> np.ndarray:
    """Grid on (0, b) whose gaps to ``b`` are geometric.

    A fraction ``upper_frac`` of the points lies in the upper half (b/2, b).
    """
    if not (b > 0):
        raise DomainError("abscissa must be positive")
    if grid_size < 1:
        raise ParameterError("grid_size must be >= 1")
    if grid_size == 1:
        return np.array([0.5 * b])
    # log(0.5/g_min) = upper_frac * log(g_max/g_min)
    log_gmin = (math.log(0.5) - upper_frac * math.log(g_max)) / (1 - upper_frac)
    g = np.exp(np.linspace(math.log(g_max), log_gmin, grid_size))
    return b * (1 - g)


def chernoff_bound(mgf: MgfEvaluator, s, grid_size: int = 64, grid=None) -> float | np.ndarray:
    """``min_j exp(-t_j s) M(t_j)`` over a grid in (0, b), capped at 1.

    Each grid term is by itself a valid bound; ``t = 0`` contributes 1.
    Grid points where the evaluator fails are skipped.
    """
    b = mgf.abscissa_b
    if not (b > 0):
        raise DomainError("Chernoff bound needs a positive abscissa")
    if grid is None:
        if not math.isfinite(b):
            raise DomainError("finite abscissa needed for the default grid")
        grid = chernoff_grid(b, grid_size)
    ts, logm = [], []
    for t in grid:
        try:
            v = float(np.real(mgf(float(t))))
        except (DomainError, ZeroDivisionError, FloatingPointError, OverflowError):
            continue
        if np.isfinite(v) and v > 0:
            ts.append(float(t))
            logm.append(math.log(v))
    ts = np.asarray(ts)
    logm = np.asarray(logm)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr <= 0):
        raise ParameterError("s must be positive")
    if ts.size == 0:
        out = np.ones_like(s_arr)
    else:
        expo = logm[None, :] - s_arr[:, None] * ts[None, :]
        out = np.minimum(1.0, np.exp(expo.min(axis=1)))
    return float(out[0]) if np.ndim(s) == 0 else out


def geometric(rng: np.random.Generator, p: float, size=None):
    """Geo(p) on {1, 2, ...} by inverse transform ``ceil(log U / log(1-p))``."""
    if not (0 < p <= 1):
        raise ParameterError(f"p must lie in (0, 1], got {p}")
    if p == 1:
        return 1 if size is None else np.ones(size, dtype=np.int64)
    u = rng.random(size)
    # 1 - u lies in (0, 1], which keeps the log finite
    k = np.ceil(np.log1p(-u) / math.log1p(-p))
    k = np.maximum(k, 1)
    return int(k) if size is None else k.astype(np.int64)


def sample_rus_backward(p_success: float, comm_sampler, fail_sampler, success_sampler, rng) -> float:
    """One draw of ``sum_1^N T_j + sum_1^{N-1} X0_j + X1`` with ``N ~ Geo(p)``.

    Samplers are callables ``f(rng) -> float``.
    """
    if not (0 < p_success <= 1):
        raise ParameterError(f"p_success must lie in (0, 1], got {p_success}")
    n = geometric(rng, p_success)
    total = 0.0
    for _ in range(n):
        total += comm_sampler(rng)
    for _ in range(n - 1):
        total += fail_sampler(rng)
    return total + success_sampler(rng)
