import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_sparse
from svdrecycle.sparsela import (CsrMatrix, SingularMatrixError, lu_factor, lu_solve,
                                 mgs_orthonormalize, spmv, spmv_transpose, thin_svd)


def test_spmv_identity_and_diagonal():
    assert np.array_equal(spmv(CsrMatrix.from_dense(np.eye(3)), np.array([1.0, 2, 3])), [1, 2, 3])
    assert np.array_equal(spmv(CsrMatrix.from_dense(np.diag([2.0, 3.0])), np.ones(2)), [2, 3])


def test_spmv_matches_dense_rows(rng):
    D = random_sparse(rng, 8)
    x = rng.standard_normal(8)
    expected = np.array([sum(D[i, j] * x[j] for j in range(8)) for i in range(8)])
    assert np.allclose(spmv(CsrMatrix.from_dense(D), x), expected, rtol=0, atol=1e-14)


def test_spmv_dimension_mismatch():
    A = CsrMatrix.from_dense(np.eye(3))
    with pytest.raises(ValueError):
        spmv(A, np.ones(2))
    with pytest.raises(ValueError):
        spmv_transpose(A, np.ones(4))


def test_spmv_transpose_cases(rng):
    A = CsrMatrix.from_dense(np.array([[0.0, 1.0], [0.0, 0.0]]))
    assert np.array_equal(spmv_transpose(A, np.array([1.0, 0.0])), [0, 1])
    D = random_sparse(rng, 8)
    x = rng.standard_normal(8)
    assert np.allclose(spmv_transpose(CsrMatrix.from_dense(D), x),
                       spmv(CsrMatrix.from_dense(D.T), x), rtol=0, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_adjoint_consistency(n, seed):
    rng = np.random.default_rng(seed)
    A = CsrMatrix.from_dense(random_sparse(rng, n, 0.4))
    x, y = rng.standard_normal(n), rng.standard_normal(n)
    lhs, rhs = y @ spmv(A, x), spmv_transpose(A, y) @ x
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_csr_rejects_bad_structure():
    with pytest.raises(ValueError):
        CsrMatrix(2, 2, np.array([0, 2, 2]), np.array([1, 0]), np.ones(2))
    with pytest.raises(ValueError):
        CsrMatrix(2, 2, np.array([0, 1]), np.array([0]), np.ones(1))


def test_mgs_cases(rng):
    Q, rank = mgs_orthonormalize(np.eye(4)[:, :2])
    assert rank == 2 and np.allclose(Q, np.eye(4)[:, :2])
    v = rng.standard_normal(6)
    assert mgs_orthonormalize(np.column_stack([v, 2 * v]))[1] == 1
    X = rng.standard_normal((20, 5))
    Q, rank = mgs_orthonormalize(X)
    assert rank == 5
    assert np.abs(Q.T @ Q - np.eye(5)).max() <= 1e-12
    coef = np.linalg.solve(Q.T @ Q, Q.T @ X)
    assert np.abs(X - Q @ coef).max() <= 1e-12 * np.abs(X).max()


def test_mgs_idempotent_on_nearly_dependent_columns(rng):
    base = rng.standard_normal((30, 4))
    X = np.column_stack([base, base @ rng.standard_normal(4) + 1e-9 * rng.standard_normal(30)])
    Q, rank = mgs_orthonormalize(X)
    assert np.abs(Q.T @ Q - np.eye(rank)).max() <= 1e-12
    Q2, rank2 = mgs_orthonormalize(Q)
    assert rank2 == rank and np.abs(Q2 - Q).max() <= 1e-12


def test_lu_cases(rng):
    F = lu_factor(np.eye(3))
    assert F.min_pivot == F.max_pivot == 1.0
    b = rng.standard_normal(3)
    assert np.array_equal(lu_solve(F, b), b)
    assert np.allclose(lu_solve(lu_factor(np.array([[0.0, 1.0], [1.0, 0.0]])), [2.0, 3.0]), [3, 2])
    assert np.allclose(lu_solve(lu_factor([[2.0]]), [3.0]), [1.5])
    M = 4 * np.eye(10) + rng.standard_normal((10, 10))
    x = rng.standard_normal(10)
    assert np.allclose(lu_solve(lu_factor(M), M @ x), x, rtol=0, atol=1e-10)
    X = rng.standard_normal((10, 3))
    assert np.allclose(lu_solve(lu_factor(M), M @ X), X, rtol=0, atol=1e-10)


def test_lu_singular():
    with pytest.raises(SingularMatrixError):
        lu_factor(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        lu_factor(np.ones((2, 3)))


def test_svd_small_cases():
    svd = thin_svd(np.array([[3.0], [4.0], [0.0]]))
    assert np.allclose(svd.singular_values, [5.0])
    assert np.allclose(np.abs(svd.left_vectors[:, 0]), [0.6, 0.8, 0.0])
    assert np.allclose(thin_svd(np.eye(3)[:, :2]).singular_values, [1.0, 1.0])


def test_svd_matches_lapack_and_reconstructs(rng):
    X = rng.standard_normal((50, 8)) @ np.diag(np.logspace(0, -6, 8))
    svd = thin_svd(X)
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    assert np.allclose(svd.singular_values, s, rtol=1e-10, atol=0)
    assert np.abs(svd.left_vectors.T @ svd.left_vectors - np.eye(8)).max() <= 1e-10
    rebuilt = (svd.left_vectors * svd.singular_values) @ svd.right_vectors.T
    assert np.linalg.norm(X - rebuilt) <= 1e-10 * np.linalg.norm(X)


def test_svd_drops_rank_deficient_columns(rng):
    A = rng.standard_normal((40, 3))
    X = np.column_stack([A, A @ rng.standard_normal((3, 2))])
    svd = thin_svd(X)
    assert svd.left_vectors.shape == (40, 3)
    assert svd.singular_values[-1] > 1e-12 * svd.singular_values[0]
