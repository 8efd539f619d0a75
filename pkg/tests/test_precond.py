import numpy as np
import pytest

from conftest import random_sparse
from svdrecycle.precond import IdentityPrecond, SsorPrecond, identity_apply, ssor_apply
from svdrecycle.sparsela import CsrMatrix


def dense_ssor(A, omega):
    D = np.diag(np.diag(A))
    L, U = np.tril(A, -1), np.triu(A, 1)
    return (D + omega * L) @ np.linalg.inv(D) @ (D + omega * U) / (omega * (2 - omega))


def random_spd(rng, n):
    B = random_sparse(rng, n, 0.3)
    return B @ B.T + n * np.eye(n)


def test_identity():
    r = np.array([1.0, 2.0])
    assert identity_apply(r) is r
    assert np.array_equal(IdentityPrecond()(np.zeros(2)), np.zeros(2))
    v = np.random.default_rng(1).standard_normal(5)
    assert IdentityPrecond().apply(v).tobytes() == v.tobytes()


def test_ssor_trivial_cases():
    r = np.array([1.0, 2.0, 3.0])
    assert np.allclose(ssor_apply(SsorPrecond(CsrMatrix.from_dense(np.eye(3))), r), r)
    d = np.array([2.0, 4.0, 8.0])
    assert np.allclose(SsorPrecond(CsrMatrix.from_dense(np.diag(d)))(r), r / d)


@pytest.mark.parametrize("omega", [1.0, 0.7, 1.5])
def test_ssor_dense_oracle(rng, omega):
    A = random_spd(rng, 10)
    r = rng.standard_normal(10)
    z = SsorPrecond(CsrMatrix.from_dense(A), omega)(r)
    assert np.allclose(dense_ssor(A, omega) @ z, r, rtol=0, atol=1e-12 * np.abs(r).max())


def test_ssor_nonsymmetric_and_block(rng):
    A = random_sparse(rng, 12, 0.4) + 6 * np.eye(12)
    P = SsorPrecond(CsrMatrix.from_dense(A), 1.2)
    R = rng.standard_normal((12, 3))
    Z = P(R)
    for j in range(3):
        assert np.allclose(Z[:, j], P(R[:, j]), rtol=0, atol=1e-14)
    assert np.allclose(dense_ssor(A, 1.2) @ Z, R, atol=1e-11)


def test_ssor_symmetric_for_symmetric_matrix(rng):
    P = SsorPrecond(CsrMatrix.from_dense(random_spd(rng, 15)))
    y, z = rng.standard_normal(15), rng.standard_normal(15)
    assert abs(z @ P(y) - y @ P(z)) <= 1e-12 * abs(z @ P(y))


def test_ssor_linear(rng):
    P = SsorPrecond(CsrMatrix.from_dense(random_spd(rng, 15)))
    x, y = rng.standard_normal(15), rng.standard_normal(15)
    lhs, rhs = P(2.5 * x - y), 2.5 * P(x) - P(y)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * np.linalg.norm(lhs)


def test_ssor_validation():
    with pytest.raises(ValueError):
        SsorPrecond(CsrMatrix.from_dense(np.diag([1.0, 0.0])))
    with pytest.raises(ValueError):
        SsorPrecond(CsrMatrix.from_dense(np.eye(2)), omega=2.0)
