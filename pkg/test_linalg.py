"""
Tests for the dense linear-algebra kernel
"""
import numpy as np
import pytest

from src.errors import NonFiniteMatrix, RankDeficient
from src.linalg import min_singular_value, pinv_left, singular_values


def test_pinv_left_recovers_identity():
    A = np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
    np.testing.assert_allclose(pinv_left(A) @ A, np.eye(2), atol=1e-14)


def test_pinv_left_of_scaled_input_matrix():
    g = np.zeros((5, 2))
    g[3, :] = 0.05 / 15.0
    g[4, 0], g[4, 1] = -0.05, 0.05
    pinv = pinv_left(g)
    assert pinv.shape == (2, 5)
    np.testing.assert_allclose(pinv @ g, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(pinv[:, :3], 0.0)


def test_pinv_left_rejects_rank_deficient():
    with pytest.raises(RankDeficient):
        pinv_left([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])


def test_pinv_left_rejects_wide_matrix():
    with pytest.raises(RankDeficient):
        pinv_left(np.ones((1, 2)))


def test_non_finite_entries_rejected():
    with pytest.raises(NonFiniteMatrix):
        singular_values([[1.0, np.nan], [0.0, 1.0]])
    with pytest.raises(NonFiniteMatrix):
        pinv_left([[np.inf], [1.0]])


def test_singular_values_descending():
    sigma = singular_values(np.diag([2.0, 3.0, 0.5]))
    np.testing.assert_allclose(sigma, [3.0, 2.0, 0.5])
    assert min_singular_value(np.diag([3.0, 2.0])) == pytest.approx(2.0)


def test_duplicate_rows_have_zero_min_singular_value():
    row = np.array([1.0, 0.3, -0.2, 0.1, 0.7])
    assert min_singular_value(np.vstack([row, row])) < 1e-12


def test_singular_values_ignore_row_order():
    A = np.random.default_rng(4).normal(size=(6, 3))
    permuted = A[[3, 0, 5, 1, 4, 2]]
    np.testing.assert_allclose(singular_values(permuted), singular_values(A), atol=1e-10)


def test_singular_values_invariant_under_orthogonal_transform():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(5, 4))
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
    np.testing.assert_allclose(singular_values(Q @ A), singular_values(A), atol=1e-9)
    assert np.all(np.diff(singular_values(A)) <= 0)
