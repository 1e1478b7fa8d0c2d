"""Small value-level linear-algebra helpers (no tape involved)."""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError


def check_matrix(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    """Validate a dense 2-D float64 array and return it as such."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{what} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{what} contains non-finite entries")
    return arr


def frobenius_sq(a: np.ndarray) -> float:
    """Sum of squared entries."""
    arr = check_matrix(a)
    return float(np.sum(arr * arr))


def numerical_rank(a: np.ndarray, tol: float = 1e-8) -> int:
    """Rank as the number of singular values above ``tol * sigma_max``.

    Uses LAPACK's bidiagonalisation SVD (``numpy.linalg.svd``); the zero
    matrix has rank 0 by convention.
    """
    arr = check_matrix(a)
    try:
        s = np.linalg.svd(arr, compute_uv=False)
    except np.linalg.LinAlgError as exc:  # non-convergence
        raise NumericError(f"SVD failed: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > tol * s[0]))
