"""Input checks shared by the estimators and functional API."""

import numpy as np
from sklearn.utils.validation import check_array


class DomainError(ValueError):
    """Point outside the domain of a copula function."""


class ParameterError(ValueError):
    """Invalid copula or model parameter."""


class FitError(RuntimeError):
    """Estimation failed (no convergence, degenerate data, ...)."""


def check_bivariate(X, *, min_rows=2, name="X"):
    """Validate a finite (n, 2) float array."""
    X = check_array(
        X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True,
        ensure_min_samples=1, input_name=name,
    )
    if X.shape[1] != 2:
        raise ValueError(f"{name} must have exactly 2 columns, got {X.shape[1]}")
    if X.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    return X


def check_series(x, *, min_len=1, name="x"):
    """Validate a finite 1-d float series."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if x.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_probability(alpha, name="alpha", *, low=0.0, high=1.0):
    alpha = float(alpha)
    if not (low < alpha < high):
        raise ValueError(f"{name} must lie in ({low}, {high}), got {alpha}")
    return alpha


def as_points(u):
    """Return (array of shape (n, 2), was_single_point)."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        if u.shape[0] != 2:
            raise DomainError("a copula point needs two coordinates")
        return u[None, :], True
    if u.ndim != 2 or u.shape[1] != 2:
        raise DomainError(f"expected points of shape (n, 2), got {u.shape}")
    return u, False
