"""Small input-checking helpers used across the package."""

import numbers

import numpy as np


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_symmetric(M, n=None, atol=1e-12):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if n is not None and M.shape[0] != n:
        raise ValueError(f"expected a {n}x{n} matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, atol=atol):
        raise ValueError("matrix is not symmetric")
    return M


def as_point(x, n):
    """Return ``x`` as a length-``n`` float vector (scalars allowed in 1D)."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).ravel()
    if x.shape != (n,):
        raise ValueError(f"expected a point in R^{n}, got {x!r}")
    return x


def as_points(x, n):
    """Return an array of points with shape ``(P, n)``."""
    x = np.asarray(x, dtype=float)
    if n == 1 and x.ndim <= 1:
        return x.reshape(-1, 1)
    x = np.atleast_2d(x)
    if x.shape[-1] != n:
        raise ValueError(f"expected points with {n} coordinates, got shape {x.shape}")
    return x.reshape(-1, n)


def unit_vector(e, n):
    e = as_point(e, n)
    norm = np.linalg.norm(e)
    if norm == 0:
        raise ValueError("direction must be non-zero")
    return e / norm


def check_finite(values, name="values"):
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains NaN or Inf")
    return values
