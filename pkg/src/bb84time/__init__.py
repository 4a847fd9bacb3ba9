"""Completion-time analysis of BB84 over a single quantum repeater.

Analytic MGF, Laplace-inversion CDF and Chernoff tail bound of the
completion time, a full-scale discrete-event simulator, a Coxian-based
synthetic sampler, and two elementary repeat-until-success modules.
"""

from .config import HardwareConfig, ShiftedExp, baseline
from .errors import (BB84TimeError, ConfigError, DegenerateProtocolError, DivergenceError, DomainError,
                     FitFailureError, NumericalInstabilityError, ParameterError, TruncationWarning)

__version__ = "0.1.0"

__all__ = [
    "HardwareConfig", "ShiftedExp", "baseline",
    "BB84TimeError", "ConfigError", "DegenerateProtocolError", "DivergenceError", "DomainError",
    "FitFailureError", "NumericalInstabilityError", "ParameterError", "TruncationWarning",
    "__version__",
]
