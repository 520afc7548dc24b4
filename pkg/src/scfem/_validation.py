"""Small argument checks shared by the estimator and the command line."""

from __future__ import annotations

import numbers

import numpy as np
from sklearn.utils.validation import check_array

from .nodes import CLENSHAW_CURTIS, LEJA

FAMILIES = (LEJA, CLENSHAW_CURTIS)
SOLVERS = ("auto", "direct", "amg", "pcg")


def check_fraction(value, name: str) -> float:
    """Marking fraction in ``(0, 1]``."""
    if not isinstance(value, numbers.Real) or not 0.0 < float(value) <= 1.0:
        raise ValueError(f"{name} must lie in (0, 1], got {value!r}")
    return float(value)


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_choice(value, choices, name: str):
    if value not in choices:
        raise ValueError(f"{name} must be one of {list(choices)}, got {value!r}")
    return value


def check_parameters(Y, M: int) -> np.ndarray:
    """2D float array of parameter points inside ``[-1, 1]^M``."""
    Y = check_array(Y, dtype=np.float64, ensure_2d=True)
    if Y.shape[1] != M:
        raise ValueError(f"expected {M} parameter columns, got {Y.shape[1]}")
    if np.any(np.abs(Y) > 1.0):
        raise ValueError("parameter points must lie in [-1, 1]^M")
    return Y
