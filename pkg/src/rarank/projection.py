"""Seeded random projection used to shrink vectors before graph indexing.

The reduction itself is lossy, so reported similarities are always recomputed
at full dimension after candidate collection (see ``rarank.index``).
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import BadDim
from .validation import as_matrix


def default_out_dim(in_dim: int) -> int:
    """Default target dimension: one ninth of the input, rounded up."""
    return max(1, math.ceil(in_dim / 9))


class RandomProjection(BaseEstimator, TransformerMixin):
    """Project vectors onto ``out_dim`` seeded random unit-norm directions.

    Parameters
    ----------
    out_dim : int or None
        Target dimension. ``None`` selects ``ceil(in_dim / 9)`` at fit time
        (576 -> 64 for the common CLIP ViT-B/16 layout).
    seed : int
        Seed for the projection matrix; the same seed always yields the same
        matrix, bit for bit.
    """

    def __init__(self, out_dim: int | None = None, seed: int = 0):
        self.out_dim = out_dim
        self.seed = seed

    def fit(self, X, y=None) -> "RandomProjection":
        X = as_matrix(X)
        in_dim = X.shape[1]
        out_dim = default_out_dim(in_dim) if self.out_dim is None else int(self.out_dim)
        if not 1 <= out_dim <= in_dim:
            raise BadDim(f"out_dim must be in [1, {in_dim}], got {out_dim}")
        rng = np.random.default_rng(np.random.PCG64(int(self.seed)))
        matrix = rng.standard_normal((out_dim, in_dim))
        matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
        self.in_dim_ = in_dim
        self.out_dim_ = out_dim
        self.matrix_ = matrix.astype(np.float32)
        self.matrix_.setflags(write=False)
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        X = as_matrix(X, self.in_dim_)
        return (X @ self.matrix_.T).astype(np.float32)

    def transform_vector(self, v: np.ndarray) -> np.ndarray:
        self._check_fitted()
        return self.transform(v.reshape(1, -1))[0]

    def _check_fitted(self) -> None:
        if not hasattr(self, "matrix_"):
            raise NotFittedError("RandomProjection is not fitted")

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, seed: int) -> "RandomProjection":
        """Rebuild a fitted projection from a stored matrix (used by index files)."""
        proj = cls(out_dim=matrix.shape[0], seed=seed)
        proj.in_dim_ = int(matrix.shape[1])
        proj.out_dim_ = int(matrix.shape[0])
        proj.matrix_ = np.ascontiguousarray(matrix, dtype=np.float32)
        proj.matrix_.setflags(write=False)
        return proj
