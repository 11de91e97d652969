"""Symmetric/PSD matrix helpers on float64 arrays."""

from __future__ import annotations

import numpy as np

SYM_TOL = 1e-10
EIG_TOL = 1e-10


def check_symmetric(s: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("expected a square matrix")
    if not np.isfinite(s).all():
        raise ValueError("matrix has non-finite entries")
    if np.abs(s - s.T).max(initial=0.0) > tol:
        raise ValueError("matrix is not symmetric within tolerance")
    return s


def check_psd(s: np.ndarray, eig_tol: float = EIG_TOL) -> np.ndarray:
    """Validate symmetry and eigenvalues >= -eig_tol; returns the input."""
    s = check_symmetric(s)
    if s.shape[0] and np.linalg.eigvalsh(s).min() < -eig_tol:
        raise ValueError("matrix is not positive semidefinite within tolerance")
    return s


def psd_sqrt(s: np.ndarray, eig_tol: float = EIG_TOL) -> np.ndarray:
    """Symmetric PSD square root R with R @ R = s.

    Eigenvalues below -eig_tol raise; small negatives from round-off are
    clamped to zero before the square root.
    """
    s = check_symmetric(s)
    vals, vecs = np.linalg.eigh(s)
    if vals.size and vals.min() < -eig_tol:
        raise ValueError("psd_sqrt: matrix is indefinite beyond tolerance")
    vals = np.clip(vals, 0.0, None)
    r = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (r + r.T)
