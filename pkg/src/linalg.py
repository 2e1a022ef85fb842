"""
Small dense linear-algebra kernel
Left pseudo-inverse and singular values of the small matrices used across the package
"""
import numpy as np

from .errors import NonFiniteMatrix, RankDeficient

# Relative singular-value threshold below which a matrix is treated as rank deficient
RANK_TOL = 1e-12


def as_matrix(data) -> np.ndarray:
    """Validate and return a finite 2-D float matrix"""
    matrix = np.array(data, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2 or matrix.size == 0:
        raise NonFiniteMatrix(f"expected a non-empty 2-D matrix, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteMatrix("matrix contains NaN or Inf entries")
    return matrix


def singular_values(matrix) -> np.ndarray:
    """Singular values in descending order, min(rows, cols) of them"""
    return np.linalg.svd(as_matrix(matrix), compute_uv=False)


def min_singular_value(matrix) -> float:
    return float(singular_values(matrix)[-1])


def pinv_left(matrix) -> np.ndarray:
    """
    Left pseudo-inverse (A^T A)^{-1} A^T of a tall full-column-rank matrix
    """
    A = as_matrix(matrix)
    rows, cols = A.shape
    if rows < cols:
        raise RankDeficient(f"left inverse needs rows >= cols, got {rows}x{cols}")

    sigma = singular_values(A)
    if sigma[-1] < RANK_TOL * sigma[0] or sigma[0] == 0.0:
        raise RankDeficient(
            f"smallest singular value {sigma[-1]:.3e} below {RANK_TOL:g} x largest {sigma[0]:.3e}"
        )
    return np.linalg.solve(A.T @ A, A.T)
