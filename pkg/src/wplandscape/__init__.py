"""Covariance dynamics, landscapes and bath integrals for damped quantum oscillators."""

from .errors import (ConfigError, DegeneratePairingError, InsufficientDataError, NotApplicableError,
                     NumericalError, QuadratureError, StiffnessError, UnsupportedError, ValidationError,
                     WPLError)
from .model import BathSpec, CovarianceState, SystemSpec, build_drift, reduce_1d, vectorize_drift

__version__ = "0.1.0"

__all__ = [
    "BathSpec", "CovarianceState", "SystemSpec", "build_drift", "reduce_1d", "vectorize_drift",
    "ConfigError", "DegeneratePairingError", "InsufficientDataError", "NotApplicableError",
    "NumericalError", "QuadratureError", "StiffnessError", "UnsupportedError", "ValidationError",
    "WPLError",
]
