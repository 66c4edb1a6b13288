"""Input validation helpers used across the estimator surface."""
from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, ZeroVector

UNIT_NORM_TOL = 1e-6
ZERO_NORM_EPS = 1e-12


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a contiguous 1-D float32 array, optionally checking length."""
    v = np.ascontiguousarray(x, dtype=np.float32)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {v.shape[0]}")
    return v


def as_matrix(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a contiguous 2-D float32 array (rows are vectors)."""
    m = np.ascontiguousarray(x, dtype=np.float32)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2 or m.shape[1] == 0:
        raise DimensionMismatch(f"expected a 2-D matrix, got shape {m.shape}")
    if dim is not None and m.shape[1] != dim:
        raise DimensionMismatch(f"expected row dimension {dim}, got {m.shape[1]}")
    return m


def normalize(vector) -> np.ndarray:
    """Return the unit-norm float32 copy of ``vector``.

    Raises ZeroVector when the L2 norm is below 1e-12; otherwise the output
    norm is 1 within 1e-6 and the direction is preserved.
    """
    v = as_vector(vector)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm < ZERO_NORM_EPS:
        raise ZeroVector(f"cannot normalize vector with norm {norm!r}")
    return (v.astype(np.float64) / norm).astype(np.float32)


def normalize_rows(matrix) -> np.ndarray:
    """Row-wise unit normalization; rows with near-zero norm raise ZeroVector."""
    m = as_matrix(matrix)
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    if np.any(norms < ZERO_NORM_EPS):
        bad = int(np.argmin(norms))
        raise ZeroVector(f"row {bad} has norm {norms[bad]!r}")
    return (m.astype(np.float64) / norms[:, None]).astype(np.float32)


def is_unit(vector: np.ndarray, tol: float = UNIT_NORM_TOL) -> bool:
    return abs(float(np.linalg.norm(vector.astype(np.float64))) - 1.0) <= tol
