"""Input validation helpers shared by the estimators and the solver entry points."""

from __future__ import annotations

import numbers

import numpy as np


def check_probability(value, name: str, *, allow_one: bool = True) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    hi_ok = value <= 1.0 if allow_one else value < 1.0
    if not (0.0 <= value and hi_ok):
        bound = "[0, 1]" if allow_one else "[0, 1)"
        raise ValueError(f"{name}={value} outside {bound}")
    return float(value)


def check_positive(value, name: str, *, allow_zero: bool = False) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if value < 0.0 or (value == 0.0 and not allow_zero):
        raise ValueError(f"{name}={value} must be {'>= 0' if allow_zero else '> 0'}")
    return float(value)


def check_index_count(value, name: str, minimum: int = 1) -> int:
    if not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name}={value} must be >= {minimum}")
    return int(value)


def as_complex_matrix(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.complex128)
    if out.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {out.shape}")
    return out


def check_unit_columns(a: np.ndarray, name: str = "A", tol: float = 1e-12) -> None:
    norms = np.linalg.norm(a, axis=0)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"columns of {name} must have unit norm (worst deviation {worst:.3e})")


def check_unit_interval_array(arr: np.ndarray, name: str, tol: float = 1e-9) -> np.ndarray:
    """Assert probabilities stay in [0, 1] up to roundoff, then clip the roundoff away."""
    lo, hi = float(np.min(arr)), float(np.max(arr))
    if lo < -tol or hi > 1.0 + tol:
        raise FloatingPointError(f"{name} left [0, 1]: range [{lo}, {hi}]")
    return np.clip(arr, 0.0, 1.0)
