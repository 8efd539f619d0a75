"""Dense and sparse linear-algebra kernels used by the solvers.

Tall dense matrices (recycling bases, solution windows, Arnoldi bases) are
plain 2-D ``numpy`` arrays with one vector per column.  Sparse operators are
:class:`CsrMatrix` instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.linalg.blas
import scipy.sparse as sp

__all__ = [
    "CsrMatrix",
    "LuFactors",
    "ThinSvd",
    "SingularMatrixError",
    "spmv",
    "spmv_transpose",
    "mgs_orthonormalize",
    "lu_factor",
    "lu_solve",
    "thin_svd",
]

# Fixed tolerances; pass explicit values to override.
MGS_DROP_TOL = 1e-12
SVD_RANK_TOL = 1e-12
JACOBI_TOL = 1e-15
JACOBI_MAX_SWEEPS = 60


class SingularMatrixError(ValueError):
    """Raised when a factorization meets an exactly zero pivot."""


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """Compressed sparse row matrix.

    Column indices are strictly increasing within each row.  A ``scipy``
    view sharing the same arrays is cached for the products.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    _sp: sp.csr_matrix = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ro = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        ci = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        va = np.ascontiguousarray(self.values, dtype=np.float64)
        if ro.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if ro[0] != 0 or ro[-1] != va.size or ci.size != va.size:
            raise ValueError("row_offsets inconsistent with stored values")
        if np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.n_cols:
                raise ValueError("column index out of range")
            # strictly increasing inside a row: every drop must sit on a row start
            steps = np.diff(ci)
            row_start = np.zeros(ci.size, dtype=bool)
            row_start[ro[1:-1][ro[1:-1] < ci.size]] = True
            if np.any((steps <= 0) & ~row_start[1:]):
                raise ValueError("column indices must be strictly increasing within rows")
        object.__setattr__(self, "row_offsets", ro)
        object.__setattr__(self, "col_indices", ci)
        object.__setattr__(self, "values", va)
        mat = sp.csr_matrix((va, ci, ro), shape=(self.n_rows, self.n_cols))
        object.__setattr__(self, "_sp", mat)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_scipy(cls, mat) -> "CsrMatrix":
        mat = sp.csr_matrix(mat)
        mat.sum_duplicates()
        mat.sort_indices()
        return cls(mat.shape[0], mat.shape[1], mat.indptr, mat.indices, mat.data)

    @classmethod
    def from_dense(cls, dense) -> "CsrMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=float)))

    def to_scipy(self) -> sp.csr_matrix:
        return self._sp

    def to_dense(self) -> np.ndarray:
        return self._sp.toarray()

    def diagonal(self) -> np.ndarray:
        return self._sp.diagonal()

    def transpose(self) -> "CsrMatrix":
        return CsrMatrix.from_scipy(self._sp.T.tocsr())

    def pattern_key(self) -> bytes:
        """Bytes identifying the sparsity pattern (not the values)."""
        return self.row_offsets.tobytes() + self.col_indices.tobytes()

    def __matmul__(self, x):
        return self._sp @ x


def spmv(A: CsrMatrix, x) -> np.ndarray:
    """Return ``A @ x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n_cols,):
        raise ValueError(f"vector of length {A.n_cols} expected, got shape {x.shape}")
    return A._sp @ x


def spmv_transpose(A: CsrMatrix, x) -> np.ndarray:
    """Return ``A.T @ x`` without forming the transpose."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n_rows,):
        raise ValueError(f"vector of length {A.n_rows} expected, got shape {x.shape}")
    return A._sp.T @ x


def mgs_orthonormalize(X, drop_tol: float = MGS_DROP_TOL) -> tuple[np.ndarray, int]:
    """Orthonormalize the columns of ``X`` by modified Gram-Schmidt.

    A column is projected once; if its norm fell below ``1/sqrt(2)`` of the
    pre-projection norm it is projected a second time.  Columns whose final
    norm is at most ``drop_tol`` times their original norm are dropped.

    Returns
    -------
    Q : ndarray, shape (n, rank)
    rank : int
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, m = X.shape
    if n < m:
        raise ValueError("mgs_orthonormalize expects a tall matrix")
    Q = np.empty((n, m), order="F")
    rank = 0
    for j in range(m):
        v = X[:, j].copy()
        orig = np.linalg.norm(v)
        if orig == 0.0:
            continue
        before = orig
        for _ in range(2):
            for i in range(rank):
                v -= (Q[:, i] @ v) * Q[:, i]
            after = np.linalg.norm(v)
            if after >= before / np.sqrt(2.0):
                break
            before = after
        if after <= drop_tol * orig:
            continue
        Q[:, rank] = v / after
        rank += 1
    return Q[:, :rank].copy(order="F"), rank


_dtrsv = scipy.linalg.blas.dtrsv


@dataclass(frozen=True)
class LuFactors:
    """Packed LU factors with partial pivoting, ``P M = L U``."""

    dim: int
    lu: np.ndarray
    perm: np.ndarray
    min_pivot: float
    max_pivot: float


def lu_factor(M) -> LuFactors:
    """Factor a small dense square matrix with partial pivoting."""
    a = np.array(M, dtype=float, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("lu_factor expects a square matrix")
    n = a.shape[0]
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        if a[p, k] == 0.0:
            raise SingularMatrixError(f"zero pivot in column {k}")
        if p != k:
            a[[k, p]] = a[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        a[k + 1:, k] /= a[k, k]
        a[k + 1:, k + 1:] -= np.outer(a[k + 1:, k], a[k, k + 1:])
    piv = np.abs(np.diag(a))
    return LuFactors(n, a, perm, float(piv.min(initial=np.inf)), float(piv.max(initial=0.0)))


def lu_solve(F: LuFactors, b) -> np.ndarray:
    """Solve ``M x = b`` with factors from :func:`lu_factor`.

    ``b`` may be a vector or a matrix of right-hand sides (one per column).
    """
    b = np.asarray(b, dtype=float)
    if b.shape[0] != F.dim:
        raise ValueError(f"right-hand side of length {F.dim} expected")
    if b.ndim == 1:
        y = _dtrsv(F.lu, b[F.perm], lower=1, diag=1)
        return _dtrsv(F.lu, y)
    y = scipy.linalg.solve_triangular(F.lu, b[F.perm], lower=True, unit_diagonal=True,
                                      check_finite=False)
    y = scipy.linalg.solve_triangular(F.lu, y, check_finite=False)
    return y


class ThinSvd(NamedTuple):
    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray


def _round_robin(m: int):
    """Yield rounds of disjoint index pairs covering every pair once."""
    players = list(range(m)) + ([-1] if m % 2 else [])
    size = len(players)
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p), max(p)) for p in pairs if -1 not in p]
        yield np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
        players = [players[0], players[-1]] + players[1:-1]


def _one_sided_jacobi(R: np.ndarray, tol: float, max_sweeps: int):
    """Orthogonalize the columns of the square matrix ``R`` by plane rotations.

    Returns ``(B, J)`` with ``B = R J``, ``J`` orthogonal and the columns of
    ``B`` mutually orthogonal.  Pairs are processed in round-robin rounds of
    disjoint pairs so each round is a single vectorized update.
    """
    m = R.shape[1]
    B = R.copy()
    J = np.eye(m)
    schedule = list(_round_robin(m))
    for _ in range(max_sweeps):
        rotated = False
        for p, q in schedule:
            if p.size == 0:
                continue
            bp, bq = B[:, p], B[:, q]
            alpha = np.einsum("ij,ij->j", bp, bp)
            beta = np.einsum("ij,ij->j", bq, bq)
            gamma = np.einsum("ij,ij->j", bp, bq)
            act = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (B, J):
                cp, cq = mat[:, p].copy(), mat[:, q]
                mat[:, p] = c * cp - s * cq
                mat[:, q] = s * cp + c * cq
        if not rotated:
            break
    return B, J


def thin_svd(X, rank_tol: float = SVD_RANK_TOL) -> ThinSvd:
    """Thin SVD of a tall matrix ``X`` (n >= m).

    ``X`` is reduced to its m x m triangular factor by column-pivoted
    Householder QR, ``X P = Q R``; one-sided Jacobi rotations then
    orthogonalize the columns of ``R.T``.  The accumulated rotations are the
    left singular vectors of ``R``, so the returned left vectors are
    orthonormal to working precision even for tiny singular values.
    Triplets with ``sigma <= rank_tol * sigma_max`` are dropped, so the
    factors may have fewer than m columns.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("thin_svd expects a 2-D array")
    n, m = X.shape
    if m < 1 or n < m:
        raise ValueError("thin_svd expects n_rows >= n_cols >= 1")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    B, J = _one_sided_jacobi(np.ascontiguousarray(R.T), JACOBI_TOL, JACOBI_MAX_SWEEPS)
    sigma = np.linalg.norm(B, axis=0)
    order = np.argsort(-sigma, kind="stable")
    sigma, B, J = sigma[order], B[:, order], J[:, order]
    if sigma[0] == 0.0:
        return ThinSvd(np.zeros((n, 0)), sigma, np.zeros((m, 0)))
    keep = sigma > rank_tol * sigma[0]
    right = np.empty((m, int(keep.sum())))
    right[piv] = B[:, keep] / sigma[keep]
    return ThinSvd(np.asfortranarray(Q @ J[:, keep]), sigma[keep], right)
