"""Small dense linear-algebra kernel used by the COWM layer.

Matrices are plain float64 numpy arrays. Every operation checks shapes and
finiteness so that a bad value is caught where it is produced rather than
three layers downstream.
"""

from __future__ import annotations

import numpy as np

COND_LIMIT = 1e12
ZERO_NORM = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not compose."""


class SingularityError(np.linalg.LinAlgError):
    """A Gram system is singular or too ill-conditioned to solve."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf entered or left a matrix operation."""


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    """Coerce `values` to a finite 2-D float64 array."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2 or a.shape[0] == 0 or a.shape[1] == 0:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {a.shape}")
    _check_finite(a, name)
    return a


def _check_finite(a: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return _check_finite(a @ b, "matmul result")


def transpose(a) -> np.ndarray:
    return np.ascontiguousarray(as_matrix(a).T)


def gram_inverse(a, ridge: float = 0.0) -> np.ndarray:
    """Return ``(AᵀA + ridge·I)⁻¹`` for a tall matrix ``A``.

    Solved against the identity with an LU factorization (partial pivoting)
    and symmetrized. Raises SingularityError when the 2-norm condition number
    of the Gram matrix exceeds ``COND_LIMIT``.
    """
    a = as_matrix(a, "A")
    if ridge < 0:
        raise ValueError(f"ridge must be non-negative, got {ridge}")
    rows, cols = a.shape
    if rows < cols:
        raise ShapeError(f"gram_inverse needs rows >= cols, got {a.shape}")
    gram = a.T @ a + ridge * np.eye(cols)
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularityError(f"Gram matrix condition {cond:.3g} exceeds {COND_LIMIT:.0e}")
    s = np.linalg.solve(gram, np.eye(cols))
    return _check_finite(0.5 * (s + s.T), "gram inverse")


def column_mean_direction(x) -> np.ndarray | None:
    """Normalized sum of the columns of `x`, or None if the sum vanishes."""
    x = as_matrix(x, "x")
    total = x.sum(axis=1)
    norm = np.linalg.norm(total)
    if norm < ZERO_NORM:
        return None
    return total / norm
