"""Hardware and protocol parameters.

All durations share one (arbitrary) time unit.  Every atomic phase is a
shifted exponential SE(rate, shift), i.e. ``shift + Exp(rate)``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ShiftedExp:
    """Shifted exponential ``shift + Exp(rate)``.

    Parameters
    ----------
    rate : float
        Rate of the exponential part (per unit time), > 0.
    shift : float
        Deterministic delay, >= 0.
    """

    rate: float
    shift: float = 0.0

    def __post_init__(self):
        if not (self.rate > 0 and math.isfinite(self.rate)):
            raise ConfigError(f"rate must be positive and finite, got {self.rate!r}")
        if not (self.shift >= 0 and math.isfinite(self.shift)):
            raise ConfigError(f"shift must be >= 0, got {self.shift!r}")

    @property
    def mean(self) -> float:
        return self.shift + 1.0 / self.rate

    @property
    def abscissa(self) -> float:
        return self.rate

    def mgf(self, t):
        """``E exp(tT)``; finite for ``Re t < rate``."""
        return np.exp(t * self.shift) * self.rate / (self.rate - t)

    def log_mgf(self, t):
        return t * self.shift + math.log(self.rate) - np.log(self.rate - t)


def exact_fraction(x: float) -> Fraction:
    """Rational value of ``x`` as written in decimal (``0.3`` -> 3/10)."""
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class HardwareConfig:
    """Protocol and hardware parameters of BB84 over one repeater.

    ``swap`` is the S-COMM phase (T_C'), ``ab`` is shared by T-COMM (T_C'')
    and the reconciliation phase K-COMM (K_C).
    """

    n: int
    alpha: float
    beta: float
    gen: ShiftedExp
    com: ShiftedExp
    swap: ShiftedExp
    ab: ShiftedExp
    p_gen: float
    p_swap: float
    w0: float
    t_c: float
    t_de: float
    t_da: float
    notes: tuple = field(default=(), compare=False, hash=False)

    def __post_init__(self):
        if not isinstance(self.n, int) or isinstance(self.n, bool) or self.n < 1:
            raise ConfigError(f"n must be a positive integer, got {self.n!r}")
        if self.n > 10_000:
            raise ConfigError("n is capped at 10^4")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not (0 < v <= 1):
                raise ConfigError(f"{name} must lie in (0, 1], got {v!r}")
        if not (0 < self.p_gen < 1):
            raise ConfigError(f"p_gen must lie in (0, 1), got {self.p_gen!r}")
        if not (0 < self.p_swap <= 1):
            raise ConfigError(f"p_swap must lie in (0, 1], got {self.p_swap!r}")
        if not (0 < self.w0 <= 1):
            raise ConfigError(f"w0 must lie in (0, 1], got {self.w0!r}")
        for name in ("t_c", "t_de", "t_da"):
            v = getattr(self, name)
            if not (v > 0):
                raise ConfigError(f"{name} must be positive, got {v!r}")
        for name in ("gen", "com", "swap", "ab"):
            if not isinstance(getattr(self, name), ShiftedExp):
                raise ConfigError(f"{name} must be a ShiftedExp")

    # exact rationals for index-set arithmetic
    @property
    def alpha_q(self) -> Fraction:
        return exact_fraction(self.alpha)

    @property
    def beta_q(self) -> Fraction:
        return exact_fraction(self.beta)

    @property
    def a_W(self) -> float:
        """Minimum single-qubit teleportation time."""
        return self.gen.shift + self.com.shift + self.swap.shift + self.ab.shift

    @property
    def floor(self) -> float:
        """Deterministic lower bound of the completion time."""
        return self.n * self.a_W + self.ab.shift

    @property
    def k_max(self) -> int:
        """``ceil(alpha n)``: the largest possible check-sample size."""
        return math.ceil(self.alpha_q * self.n)

    def with_(self, **changes) -> "HardwareConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("notes")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HardwareConfig":
        try:
            kw = dict(d)
            for name in ("gen", "com", "swap", "ab"):
                v = kw[name]
                kw[name] = v if isinstance(v, ShiftedExp) else ShiftedExp(float(v["rate"]), float(v.get("shift", 0.0)))
            notes = kw.pop("notes", ())
            if isinstance(notes, str):
                notes = (notes,)
            for name in ("alpha", "beta", "p_gen", "p_swap", "w0", "t_c", "t_de", "t_da"):
                kw[name] = float(kw[name])
            n = kw["n"]
            if isinstance(n, float) and n.is_integer():
                n = int(n)
            kw["n"] = n
            return cls(notes=tuple(notes), **kw)
        except KeyError as exc:
            raise ConfigError(f"missing config field {exc.args[0]!r}") from None
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"malformed config: {exc}") from None

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def baseline(p_gen: float = 0.1, **overrides) -> HardwareConfig:
    """Evaluation configuration used throughout the examples and tests.

    ``p_swap = 0.5`` is an assumed value (the evaluation does not state it).
    """
    kw = dict(
        n=50, alpha=0.3, beta=0.95,
        gen=ShiftedExp(2.0, 0.5), com=ShiftedExp(2.0, 0.5), swap=ShiftedExp(2.0, 0.5),
        ab=ShiftedExp(1.0, 1.0),
        p_gen=p_gen, p_swap=0.5, w0=0.98, t_c=4e4, t_de=4e4, t_da=4e4,
        notes=("p_swap=0.5 is an assumed value",),
    )
    kw.update(overrides)
    return HardwareConfig(**kw)
