"""Dense linear-algebra helpers shared by every other module.

Matrices are plain float64 numpy arrays. Products go through numpy's
``matmul``; with a fixed BLAS thread count the result is bit-reproducible
from run to run, which is all the benchmark traces rely on.
"""

from __future__ import annotations

import numpy as np


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a finite 2-D float64 array (no copy when possible)."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average ``a`` with its transpose; the result is exactly symmetric."""
    return 0.5 * (a + a.T)


def masked_gram(D: np.ndarray, mask) -> np.ndarray:
    """Return ``D.T @ M @ D`` for the diagonal mask ``M``.

    Only the masked rows of ``D`` are read, so the cost is
    ``len(mask.indices) * k**2``.
    """
    if mask.dim != D.shape[0]:
        raise ValueError(f"mask dimension {mask.dim} does not match {D.shape[0]} rows")
    k = D.shape[1]
    if mask.indices.size == 0:
        return np.zeros((k, k))
    Dm = D[mask.indices]
    return symmetrize(mask.scale * (Dm.T @ Dm))
