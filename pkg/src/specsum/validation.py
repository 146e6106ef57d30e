"""Argument checks shared by the estimator wrappers."""

from __future__ import annotations

import math
import numbers

import numpy as np

from .errors import InputError
from .oracle import DenseOracle, MatrixOracle, SpectralBounds


def check_probability(name: str, value) -> float:
    if not isinstance(value, numbers.Real) or not 0 < value < 1:
        raise InputError(f"{name} must be a real number in (0, 1), got {value!r}")
    return float(value)


def check_positive(name: str, value, integer: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind) or not value > 0 or not math.isfinite(value):
        raise InputError(f"{name} must be a positive {'integer' if integer else 'number'}, got {value!r}")
    return int(value) if integer else float(value)


def check_bounds(bounds=None, kappa=None) -> SpectralBounds | None:
    """Accept a SpectralBounds, a ``(lambda_min, lambda_max)`` pair or a condition number."""
    if bounds is not None and kappa is not None:
        raise InputError("give bounds or kappa, not both")
    if kappa is not None:
        return SpectralBounds.from_kappa(check_positive("kappa", kappa))
    if bounds is None or isinstance(bounds, SpectralBounds):
        return bounds
    try:
        lo, hi = bounds
    except (TypeError, ValueError):
        raise InputError(f"bounds must be a (lambda_min, lambda_max) pair, got {bounds!r}") from None
    return SpectralBounds(float(lo), float(hi))


def check_oracle(X, hermitian: bool = True) -> MatrixOracle:
    """Return ``X`` if it is already an oracle; wrap a square array otherwise."""
    if isinstance(X, MatrixOracle):
        if hermitian and not getattr(X, "hermitian", True):
            raise InputError("expected a Hermitian oracle")
        return X
    M = np.asarray(X)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise InputError(f"expected a non-empty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InputError("matrix has non-finite entries")
    return DenseOracle(M, hermitian=hermitian)
