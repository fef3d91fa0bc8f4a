"""Input validation helpers shared across the public API."""

from __future__ import annotations

import numpy as np


def as_points(x, dim: int | None = None, name: str = "points") -> np.ndarray:
    """Coerce to a float64 (n, d) array, checking shape and finiteness.

    Accepts a single point (d,) and promotes it to (1, d).
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a (n, d) array, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"{name} must have dimension {dim}, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def as_unit_normals(n, count: int, dim: int, tol: float = 1e-6) -> np.ndarray:
    """Coerce to (count, dim) unit vectors; reject norms off 1 by more than tol."""
    arr = as_points(n, dim=dim, name="normals")
    if arr.shape[0] != count:
        raise ValueError(f"normals count {arr.shape[0]} does not match points count {count}")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValueError(f"normals must be unit length (tolerance {tol}); worst deviation {worst:g}")
    return arr


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if value < 0:
        raise ValueError(f"{name} must be >= 0, got {value}")
    return value


def check_count(value: int, name: str, minimum: int = 1) -> int:
    ivalue = int(value)
    if ivalue != value or ivalue < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value}")
    return ivalue
