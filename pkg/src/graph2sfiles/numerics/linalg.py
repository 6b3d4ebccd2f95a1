"""Symmetric eigendecomposition with a deterministic eigenvector sign."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor

SYMMETRY_TOL = 1e-10
_TIE_TOL = 1e-12


def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its entry of largest magnitude is positive.

    Entries within 1e-12 of the largest magnitude count as tied; the first of
    them (lowest row index) decides.
    """
    v = np.array(vectors, dtype=np.float64, copy=True)
    for j in range(v.shape[1]):
        col = v[:, j]
        mag = np.abs(col)
        top = np.flatnonzero(mag >= mag.max() - _TIE_TOL)[0]
        if col[top] < 0:
            v[:, j] = -col
    return v


def sym_eig(mat) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a symmetric matrix."""
    a = mat.data if isinstance(mat, Tensor) else np.asarray(mat, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"sym_eig needs a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.abs(a).max(initial=0.0)))
    if np.abs(a - a.T).max(initial=0.0) > SYMMETRY_TOL * scale:
        raise ValueError("sym_eig needs a symmetric matrix")
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return vals, fix_signs(vecs)


def sign_is_well_defined(vectors: np.ndarray, tol: float = 1e-9) -> bool:
    """True when every column's largest-magnitude entries share one sign.

    When they do not, the sign convention depends on node order, so a
    positional encoding built from these vectors is not permutation-equivariant.
    """
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        mag = np.abs(col)
        tops = col[mag >= mag.max() - tol]
        if (tops > 0).any() and (tops < 0).any():
            return False
    return True
