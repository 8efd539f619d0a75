"""Restarted GMRES over an abstract linear operator."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .sparsela import CsrMatrix

# Floor for the in-cycle target tightening, relative to rel_tol.
MIN_TARGET_SCALE = 1e-6

__all__ = [
    "LinearOperator",
    "aslinearoperator",
    "GmresConfig",
    "SolveReport",
    "gmres_cycle",
    "solve_restarted",
    "Augmentation",
    "solve_augmented",
]


@dataclass(frozen=True)
class LinearOperator:
    """A square linear map given by its action on vectors."""

    apply: Callable[[np.ndarray], np.ndarray]
    dim: int

    def __call__(self, x):
        return self.apply(x)


def aslinearoperator(A) -> LinearOperator:
    if isinstance(A, LinearOperator):
        return A
    if isinstance(A, CsrMatrix):
        mat = A.to_scipy()
        return LinearOperator(mat.__matmul__, A.n_rows)
    if hasattr(A, "shape") and hasattr(A, "__matmul__"):
        return LinearOperator(A.__matmul__, A.shape[0])
    raise TypeError(f"cannot interpret {type(A).__name__} as a linear operator")


@dataclass(frozen=True)
class GmresConfig:
    restart: int = 30
    rel_tol: float = 1e-8
    max_restarts: int = 500
    happy_breakdown_tol: float = 1e-14

    def __post_init__(self):
        if self.restart < 1:
            raise ValueError("restart must be >= 1")
        if not 0.0 < self.rel_tol < 1.0:
            raise ValueError("rel_tol must lie in (0, 1)")
        if self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")


@dataclass
class SolveReport:
    """Iteration statistics of one (possibly restarted) solve.

    ``residual_history`` concatenates the per-cycle histories; each cycle
    contributes its initial residual norm followed by one estimate per
    iteration.  ``cycle_offsets`` holds the index where each cycle starts.
    """

    iterations: int = 0
    restarts: int = 0
    residual_history: list = field(default_factory=list)
    cycle_offsets: list = field(default_factory=list)
    true_relative_residual: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    happy_breakdown: bool = False

    def cycles(self):
        """Split ``residual_history`` into one list per cycle."""
        bounds = list(self.cycle_offsets) + [len(self.residual_history)]
        return [self.residual_history[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def _arnoldi_cycle(op, r0, x0, restart, target, happy_tol):
    """One GMRES cycle started from residual ``r0``.

    Arnoldi with Gram-Schmidt orthogonalization; the Hessenberg columns are
    reduced on the fly by Givens rotations.

    Returns the new iterate, the residual estimates (initial one included),
    whether ``target`` was reached and whether a happy breakdown occurred.
    """
    n = r0.size
    k_max = min(restart, op.dim)
    beta = np.linalg.norm(r0)
    history = [beta]
    if beta == 0.0 or beta <= target:
        return x0.copy(), history, True, False
    Q = np.empty((n, k_max + 1), order="F")
    H = np.zeros((k_max + 1, k_max))
    cs, sn = [], []
    g = [0.0] * (k_max + 1)
    g[0] = float(beta)
    Q[:, 0] = r0 / beta
    reached = happy = False
    k = 0
    for j in range(k_max):
        w = op(Q[:, j])
        basis = Q[:, :j + 1]
        before = np.sqrt(w @ w)
        # classical Gram-Schmidt, repeated once when cancellation is severe
        for _ in range(2):
            h = basis.T @ w
            w -= basis @ h
            H[:j + 1, j] += h
            after = np.sqrt(w @ w)
            if after >= before / np.sqrt(2.0):
                break
            before = after
        col = H[:j + 2, j].tolist()
        col[j + 1] = after
        for i in range(j):
            a, b = col[i], col[i + 1]
            col[i] = cs[i] * a + sn[i] * b
            col[i + 1] = -sn[i] * a + cs[i] * b
        denom = math.hypot(col[j], col[j + 1])
        if denom == 0.0:
            c, s = 1.0, 0.0
        else:
            c, s = col[j] / denom, col[j + 1] / denom
        cs.append(c)
        sn.append(s)
        col[j], col[j + 1] = denom, 0.0
        H[:j + 2, j] = col
        g[j + 1] = -s * g[j]
        g[j] = c * g[j]
        k = j + 1
        history.append(abs(g[j + 1]))
        if after <= happy_tol * beta:
            happy = True
            break
        if abs(g[j + 1]) <= target:
            reached = True
            break
        Q[:, j + 1] = w / after
    R = H[:k, :k]
    diag = np.abs(np.diag(R))
    if diag.min() > 1e-14 * diag.max():
        y = scipy.linalg.solve_triangular(R, g[:k], check_finite=False)
    else:
        # singular reduced system, which only a singular operator produces
        y = np.linalg.lstsq(R, g[:k], rcond=None)[0]
    return x0 + Q[:, :k] @ y, history, reached or happy, happy


def gmres_cycle(op, rhs, x0, cfg: GmresConfig):
    """Run a single GMRES cycle of at most ``cfg.restart`` iterations.

    The iterate minimizes ``||rhs - op(x)||`` over ``x0`` plus the Krylov
    space of ``op`` generated by the initial residual.
    """
    op = aslinearoperator(op)
    rhs = np.asarray(rhs, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    tic = time.perf_counter()
    report = SolveReport(cycle_offsets=[0])
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0 and not np.any(x0):
        report.residual_history = [0.0]
        report.true_relative_residual = 0.0
        report.converged = True
        return x0.copy(), report
    r0 = rhs - op(x0)
    target = cfg.rel_tol * (rhs_norm if rhs_norm > 0 else np.linalg.norm(r0))
    x, history, reached, happy = _arnoldi_cycle(
        op, r0, x0, cfg.restart, target, cfg.happy_breakdown_tol)
    report.iterations = len(history) - 1
    report.residual_history = history
    report.happy_breakdown = happy
    report.converged = reached
    report.true_relative_residual = np.linalg.norm(rhs - op(x)) / (rhs_norm or 1.0)
    report.wall_time = time.perf_counter() - tic
    return x, report


def _tighten(scale, res, rel_tol):
    """Shrink the in-cycle target after the estimate met it but the true residual did not."""
    return max(scale * min(0.5, max(0.5 * rel_tol / res, 1e-4)), MIN_TARGET_SCALE)


def solve_restarted(op, rhs, x0, cfg: GmresConfig,
                    residual_callback: Optional[Callable[[np.ndarray], float]] = None):
    """Restarted GMRES.

    Parameters
    ----------
    op, rhs, x0, cfg
        Operator, right-hand side, initial guess and configuration.  ``rhs``
        is also the reference for the relative residual estimates inside a
        cycle.
    residual_callback
        Maps an iterate to its true relative residual.  Convergence is only
        declared when this value is ``<= cfg.rel_tol``; without it the
        estimate ``||rhs - op(x)|| / ||rhs||`` is used.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    op = aslinearoperator(op)
    rhs = np.asarray(rhs, dtype=float)
    x = np.array(x0, dtype=float, copy=True)
    tic = time.perf_counter()
    report = SolveReport()
    rhs_norm = np.linalg.norm(rhs)

    def true_residual(v):
        if residual_callback is not None:
            return residual_callback(v)
        return np.linalg.norm(rhs - op(v)) / (rhs_norm or 1.0)

    if rhs_norm == 0.0 and residual_callback is None:
        x[:] = 0.0
        report.true_relative_residual = 0.0
        report.converged = True
        return x, report

    res = true_residual(x)
    if res <= cfg.rel_tol:
        report.true_relative_residual = res
        report.converged = True
        report.wall_time = time.perf_counter() - tic
        return x, report

    scale = 1.0
    cycles = 0
    while cycles <= cfg.max_restarts:
        r0 = rhs - op(x)
        ref = rhs_norm if rhs_norm > 0 else np.linalg.norm(r0)
        target = cfg.rel_tol * ref * scale
        report.cycle_offsets.append(len(report.residual_history))
        x, history, reached, happy = _arnoldi_cycle(
            op, r0, x, cfg.restart, target, cfg.happy_breakdown_tol)
        cycles += 1
        report.iterations += len(history) - 1
        report.residual_history.extend(history)
        report.happy_breakdown |= happy
        res = true_residual(x)
        if res <= cfg.rel_tol:
            report.converged = True
            break
        if reached:
            scale = _tighten(scale, res, cfg.rel_tol)
    report.restarts = max(cycles - 1, 0)
    report.true_relative_residual = res
    report.wall_time = time.perf_counter() - tic
    return x, report


# ------------------------------------------------------------ augmentation

# Directions whose norm falls below this fraction after orthogonalization
# against the residual basis are treated as already contained in it.
AUG_DROP_TOL = 1e-13
# coefficient rounding allowed per cycle, relative to the target and to ||rhs||
GUARD_FACTOR = 1e-2
GUARD_FLOOR = 1e4 * np.finfo(float).eps


@dataclass(frozen=True, eq=False)
class Augmentation:
    """Search-space augmentation by ``span(V)`` for :func:`solve_augmented`.

    Let ``F`` be the full (preconditioned, unprojected) operator.  The
    Krylov space is generated by a projected operator whose action splits
    as ``F(q) = w + Y @ c`` with ``(w, c) = split(q)``.

    Attributes
    ----------
    V : ndarray, shape (n, s)
        Augmentation basis.
    Z : ndarray, shape (n, s)
        ``F(V)``.
    Y : ndarray, shape (n, p)
        Range of the part of ``F`` removed by the projection.
    split : callable
        ``q -> (w, c)`` as above; ``w`` is the projected operator applied
        to ``q``.
    """

    V: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    split: Callable[[np.ndarray], tuple]

    @property
    def dim(self) -> int:
        return self.V.shape[0]


class _AugmentedBasis:
    """Orthonormal bases describing the residual space of an augmented cycle.

    ``UZ`` spans ``Z``; ``OY`` spans the part of ``Y`` orthogonal to ``Z``
    and ``Y = UZ @ YZ + OY @ YO``.
    """

    def __init__(self, aug: Augmentation):
        self.UZ, self.RZ = scipy.linalg.qr(aug.Z, mode="economic")
        dz = np.abs(np.diag(self.RZ))
        self.rz_ok = dz.size > 0 and dz.min() > 1e-14 * dz.max()
        Y = aug.Y
        YZ = self.UZ.T @ Y
        Yp = Y - self.UZ @ YZ
        corr = self.UZ.T @ Yp
        Yp -= self.UZ @ corr
        self.YZ = YZ + corr
        ref = max(np.linalg.norm(Y, axis=0).max(initial=0.0), np.finfo(float).tiny)
        if Y.shape[1]:
            Qy, Ry, piv = scipy.linalg.qr(Yp, mode="economic", pivoting=True)
            rank = int(np.sum(np.abs(np.diag(Ry)) > AUG_DROP_TOL * ref))
            self.OY = Qy[:, :rank]
            self.YO = np.empty((rank, Y.shape[1]))
            self.YO[:, piv] = Ry[:rank]
        else:
            self.OY = np.zeros((Y.shape[0], 0))
            self.YO = np.zeros((0, 0))

    def solve_t(self, rhs):
        if self.rz_ok:
            return scipy.linalg.solve_triangular(self.RZ, rhs, check_finite=False)
        return np.linalg.lstsq(self.RZ, rhs, rcond=None)[0]


def _householder(x):
    """Reflector ``v`` (unit) with ``(I - 2 v v^T) x = -sign(x0) ||x|| e1``."""
    v = x.copy()
    norm = math.sqrt(x @ x)
    if norm == 0.0:
        return None, 0.0
    alpha = -norm if x[0] >= 0 else norm
    v[0] -= alpha
    vn = math.sqrt(v @ v)
    if vn == 0.0:
        return None, alpha
    return v / vn, alpha


_EPS = np.finfo(float).eps
_dtrsv = scipy.linalg.blas.dtrsv
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def _coefficients_safe(R, g, rmax, guard):
    """Whether ``R^{-1} g`` is small enough to be combined without losing ``guard``.

    ``rmax`` is the largest entry of ``R`` in absolute value.
    """
    y = _dtrsv(R, g)
    size = math.sqrt(y @ y) * rmax
    return math.isfinite(size) and _EPS * size <= guard


def _augmented_cycle(aug: Augmentation, basis: _AugmentedBasis, z, c0, x0,
                     restart, target, happy_tol, guard):
    """One cycle of minimal-residual iteration over ``span(V) + K_k``.

    ``z`` starts the Krylov space of the projected operator; the full
    residual at the cycle start is ``z + Y @ c0``.  The iterate minimizes
    the full residual over ``x0 + span(V) + K_k`` after every Arnoldi step;
    its norm is tracked through an orthonormal basis ``[UZ, OY, omega_j]``
    of the residual space, dropping the ``UZ`` part that the ``V``
    correction cancels exactly.

    When the start vector has components along ``span(V)`` the Krylov space
    may come to contain them as well, and the least-squares coefficients
    grow without bound.  The cycle ends, without the last direction, once
    rounding in the coefficients could reach ``guard``.
    """
    n = z.size
    k_max = min(restart, n)
    UZ, OY = basis.UZ, basis.OY
    nz = UZ.shape[1]
    sy = OY.shape[1]
    rows_max = sy + k_max + 1
    # [UZ, omega_1, omega_2, ...] with the OY columns leading the omegas
    B = np.empty((n, nz + rows_max), order="F")
    B[:, :nz] = UZ
    B[:, nz:nz + sy] = OY
    nrow = sy
    TQ = np.zeros((rows_max, k_max + 1))        # omega coordinates of q_i
    TZ = np.zeros((nz, k_max + 1))              # UZ coordinates of q_i

    def add_vector(i, q):
        nonlocal nrow
        Bk = B[:, :nz + nrow]
        a = Bk.T @ q
        rho = q - Bk @ a
        nu = math.sqrt(rho @ rho)
        if nu < 0.5:
            b = Bk.T @ rho
            rho -= Bk @ b
            a += b
            nu = math.sqrt(rho @ rho)
        TZ[:, i] = a[:nz]
        TQ[:nrow, i] = a[nz:]
        if nu > AUG_DROP_TOL:
            B[:, nz + nrow] = rho / nu
            TQ[nrow, i] = nu
            nrow += 1

    beta = float(np.linalg.norm(z))
    c0 = np.asarray(c0, dtype=float)
    d = basis.YO @ c0 if sy else np.zeros(0)
    dZ = basis.YZ @ c0 if c0.size else np.zeros(UZ.shape[1])
    Q = np.empty((n, k_max + 1), order="F")
    H = np.zeros((k_max + 1, k_max))
    C = np.zeros((aug.Y.shape[1], k_max))
    g = np.zeros(rows_max)
    g[:sy] = d
    if beta > 0.0:
        Q[:, 0] = z / beta
        add_vector(0, Q[:, 0])
        g[:nrow] += beta * TQ[:nrow, 0]
        dZ = dZ + beta * TZ[:, 0]
    history = [float(np.linalg.norm(g[:nrow]))]
    Qacc = np.eye(rows_max)
    R = np.zeros((rows_max, k_max))
    rmax = 0.0
    k = 0
    nq = 1 if beta > 0.0 else 0
    reached = history[0] <= target
    happy = False
    if beta > 0.0 and not reached:
        for j in range(k_max):
            w, c = aug.split(Q[:, j])
            C[:, j] = c
            basis_q = Q[:, :j + 1]
            before = math.sqrt(w @ w)
            for _ in range(2):
                h = basis_q.T @ w
                w -= basis_q @ h
                H[:j + 1, j] += h
                after = math.sqrt(w @ w)
                if after >= before * _INV_SQRT2:
                    break
                before = after
            happy = after <= happy_tol * beta
            if not happy:
                H[j + 1, j] = after
                Q[:, j + 1] = w / after
                add_vector(j + 1, Q[:, j + 1])
                nq = j + 2
            col = TQ[:nrow, :nq] @ H[:nq, j]
            if sy:
                col[:sy] += basis.YO @ c
            col = Qacc[:nrow, :nrow].T @ col
            if j < nrow:
                v, alpha = _householder(col[j:nrow])
                if v is not None:
                    sub = Qacc[:nrow, j:nrow]
                    sub -= (2.0 * (sub @ v))[:, None] * v
                    g[j:nrow] -= 2.0 * (v @ g[j:nrow]) * v
                    col[j] = alpha
                    col[j + 1:nrow] = 0.0
            R[:nrow, j] = col
            rmax = max(rmax, float(np.abs(col).max()))
            if not _coefficients_safe(R[:j + 1, :j + 1], g[:j + 1], rmax, guard):
                history.append(history[-1])
                break
            k = j + 1
            est = math.sqrt(g[k:nrow] @ g[k:nrow]) if k < nrow else 0.0
            history.append(est)
            if happy:
                break
            if est <= target:
                reached = True
                break
    if k:
        Rk = R[:k, :k]
        diag = np.abs(np.diag(Rk))
        if k <= nrow and diag.min() > 1e-14 * diag.max():
            y = scipy.linalg.solve_triangular(Rk, g[:k], check_finite=False)
        else:
            y = np.linalg.lstsq(R[:nrow, :k], g[:nrow], rcond=None)[0]
        Hy = H[:nq, :k] @ y
        t = basis.solve_t(dZ - TZ[:, :nq] @ Hy - (basis.YZ @ (C[:, :k] @ y) if C.shape[0] else 0.0))
        x = x0 + Q[:, :k] @ y + aug.V @ t
    else:
        t = basis.solve_t(dZ)
        x = x0 + aug.V @ t
    return x, history, reached or happy, happy


def solve_augmented(aug: Augmentation, start: Callable[[np.ndarray], tuple], rhs_norm: float,
                    x0, cfg: GmresConfig,
                    residual_callback: Callable[[np.ndarray], float]):
    """Restarted minimal-residual iteration over an augmented Krylov space.

    Each cycle minimizes the full residual over ``x + span(V) + K_k(P, z)``
    where ``P`` is the projected operator of ``aug`` and ``(z, c) =
    start(x)`` with ``z + Y c`` the full residual of ``x``.  In-cycle
    estimates are relative to ``rhs_norm``; convergence is declared on
    ``residual_callback``.
    """
    x = np.array(x0, dtype=float, copy=True)
    tic = time.perf_counter()
    report = SolveReport()
    res = residual_callback(x)
    if res <= cfg.rel_tol:
        report.true_relative_residual = res
        report.converged = True
        report.wall_time = time.perf_counter() - tic
        return x, report
    basis = _AugmentedBasis(aug)
    guard = max(GUARD_FACTOR * cfg.rel_tol, GUARD_FLOOR) * rhs_norm
    scale = 1.0
    cycles = 0
    while cycles <= cfg.max_restarts:
        z, c0 = start(x)
        target = cfg.rel_tol * rhs_norm * scale
        report.cycle_offsets.append(len(report.residual_history))
        x, history, reached, happy = _augmented_cycle(
            aug, basis, z, c0, x, cfg.restart, target, cfg.happy_breakdown_tol, guard)
        cycles += 1
        report.iterations += len(history) - 1
        report.residual_history.extend(history)
        report.happy_breakdown |= happy
        res = residual_callback(x)
        if res <= cfg.rel_tol:
            report.converged = True
            break
        if reached:
            scale = _tighten(scale, res, cfg.rel_tol)
    report.restarts = max(cycles - 1, 0)
    report.true_relative_residual = res
    report.wall_time = time.perf_counter() - tic
    return x, report
