"""Time-dependent convection-diffusion benchmark.

Bilinear (Q1) finite elements on a uniform ``N x N`` grid of the unit
square, homogeneous Dirichlet conditions and a semi-implicit Euler step:

    (1/dt) M u^n + nu K u^n + N(u^{n-1}) u^n = (1/dt) M u^{n-1} + F^n

where ``N(w)`` is the convection matrix with coefficient ``w * I_h(b)``,
``I_h(b)`` being the nodal interpolant of the recirculating velocity field.
The forcing excites the 16 lowest diagonal Laplace modes with random
amplitudes drawn afresh at every step.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.io
import scipy.sparse as sp

from .krylov import GmresConfig, SolveReport
from .precond import IdentityPrecond, SsorPrecond
from .recycle import (Composition, InitialGuess, RecycleMethod,
                      SingularRestrictionError, build_space, recycled_solve)
from .sparsela import CsrMatrix
from .svdwindow import SolutionWindow, SvdMode

__all__ = [
    "ProblemParams",
    "StepSystem",
    "Xoshiro256",
    "SequenceConfig",
    "SequenceResult",
    "velocity",
    "forcing",
    "forcing_coefficients",
    "assemble_step",
    "run_sequence",
    "iteration_stats",
    "export_matrix_market",
    "export_vector",
]

N_MODES = 16
_MASK = (1 << 64) - 1


@dataclass(frozen=True)
class ProblemParams:
    N: int = 32
    nu: float = 0.1
    dt: float = 0.5
    n_steps: int = 200
    C: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def n_unknowns(self) -> int:
        return (self.N - 1) ** 2


@dataclass
class StepSystem:
    A: CsrMatrix
    b: np.ndarray
    step_index: int


class Xoshiro256:
    """xoshiro256** generator seeded through splitmix64.

    ``uniform()`` returns ``(next() >> 11) * 2**-53`` in ``[0, 1)``.  The
    update rule is fixed so that runs are reproducible in any language.
    """

    def __init__(self, seed: int):
        z = int(seed) & _MASK
        state = []
        for _ in range(4):
            z = (z + 0x9E3779B97F4A7C15) & _MASK
            t = z
            t = ((t ^ (t >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            t = ((t ^ (t >> 27)) * 0x94D049BB133111EB) & _MASK
            state.append(t ^ (t >> 31))
        self.s = state

    @staticmethod
    def _rotl(x, k):
        return ((x << k) | (x >> (64 - k))) & _MASK

    def next(self) -> int:
        s = self.s
        result = (self._rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = self._rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        return (self.next() >> 11) * 2.0 ** -53


def velocity(x, y):
    """Recirculating, divergence-free field on the unit square."""
    return (-np.sin(np.pi * x) * np.cos(np.pi * y),
            np.cos(np.pi * x) * np.sin(np.pi * y))


def forcing_coefficients(rng: Xoshiro256) -> np.ndarray:
    """``c_1 = 1`` and ``c_2..c_16`` uniform in ``[-1, 1]``, drawn in order."""
    c = np.empty(N_MODES)
    c[0] = 1.0
    for j in range(1, N_MODES):
        c[j] = -1.0 + 2.0 * rng.uniform()
    return c


def forcing_field(x, y, coeffs, C):
    j = np.arange(1, len(coeffs) + 1)
    amp = 0.5 * C * np.asarray(coeffs) * np.exp(-j ** 2 / 20.0)
    sx = np.sin(2.0 * np.pi * np.multiply.outer(x, j))
    sy = np.sin(2.0 * np.pi * np.multiply.outer(y, j))
    return (sx * sy) @ amp


# ---------------------------------------------------------------- mesh


@dataclass(frozen=True, eq=False)
class _Mesh:
    """Uniform Q1 mesh with a precomputed interior CSR pattern.

    ``slot[e, a, b]`` is the position in the interior CSR value array of the
    entry coupling local nodes ``a`` and ``b`` of element ``e``, or ``-1``
    when either node lies on the boundary.
    """

    N: int
    h: float
    elem: np.ndarray
    node_xy: np.ndarray
    interior: np.ndarray
    full_to_int: np.ndarray
    pattern: CsrMatrix
    slot: np.ndarray
    qp_xy: np.ndarray
    phi: np.ndarray
    grad: np.ndarray
    weight: float



def _reference_q1(points):
    """Values and reference gradients of the Q1 basis at ``points``.

    Local nodes are ordered (0,0), (1,0), (0,1), (1,1).
    """
    xi, eta = points[:, 0], points[:, 1]
    phi = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta], axis=1)
    dxi = np.stack([-(1 - eta), 1 - eta, -eta, eta], axis=1)
    deta = np.stack([-(1 - xi), -xi, 1 - xi, xi], axis=1)
    return phi, np.stack([dxi, deta], axis=2)


def _quadrature(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    pts = np.array([(a, b) for b in x for a in x])
    wts = np.array([wa * wb for wb in w for wa in w])
    return pts, wts


@lru_cache(maxsize=8)
def _mesh(N: int) -> _Mesh:
    h = 1.0 / N
    idx = np.arange((N + 1) ** 2).reshape(N + 1, N + 1)  # idx[j, i]: node at (i h, j h)
    ll = idx[:-1, :-1].ravel()
    elem = np.stack([ll, ll + 1, ll + N + 1, ll + N + 2], axis=1)
    ii, jj = np.meshgrid(np.arange(N + 1), np.arange(N + 1))
    node_xy = np.stack([ii.ravel() * h, jj.ravel() * h], axis=1)
    on_bnd = (ii.ravel() == 0) | (ii.ravel() == N) | (jj.ravel() == 0) | (jj.ravel() == N)
    interior = np.flatnonzero(~on_bnd)
    full_to_int = np.full((N + 1) ** 2, -1)
    full_to_int[interior] = np.arange(interior.size)

    li = full_to_int[elem]
    rows = np.repeat(li, 4, axis=1).ravel()
    cols = np.tile(li, (1, 4)).ravel()
    ok = (rows >= 0) & (cols >= 0)
    n = interior.size
    pat = sp.csr_matrix((np.ones(ok.sum()), (rows[ok], cols[ok])), shape=(n, n))
    pat.sum_duplicates()
    pat.sort_indices()
    pattern = CsrMatrix(n, n, pat.indptr, pat.indices, np.zeros(pat.nnz))
    # locate every (row, col) pair inside the sorted CSR layout
    flat = np.full(rows.size, -1)
    lin = rows[ok].astype(np.int64) * n + cols[ok]
    csr_lin = np.repeat(np.arange(n), np.diff(pat.indptr)).astype(np.int64) * n + pat.indices
    flat[ok] = np.searchsorted(csr_lin, lin)
    slot = flat.reshape(-1, 4, 4)

    pts, wts = _quadrature(2)
    phi, dref = _reference_q1(pts)
    elem_xy = node_xy[elem[:, 0]]
    qp_xy = elem_xy[:, None, :] + h * pts[None, :, :]
    return _Mesh(N, h, elem, node_xy, interior, full_to_int, pattern, slot,
                 qp_xy, phi, dref / h, float(wts[0] * h * h))


def _scatter(mesh: _Mesh, local: np.ndarray) -> CsrMatrix:
    """Sum element matrices ``local[e, a, b]`` into the interior pattern."""
    ok = mesh.slot >= 0
    vals = np.bincount(mesh.slot[ok], weights=local[ok], minlength=mesh.pattern.nnz)
    p = mesh.pattern
    return CsrMatrix(p.n_rows, p.n_cols, p.row_offsets, p.col_indices, vals)


def _local_mass(mesh: _Mesh) -> np.ndarray:
    return mesh.weight * np.einsum("qa,qb->ab", mesh.phi, mesh.phi)


def _local_stiffness(mesh: _Mesh) -> np.ndarray:
    return mesh.weight * np.einsum("qad,qbd->ab", mesh.grad, mesh.grad)


def _local_convection(mesh: _Mesh, u_full: np.ndarray) -> np.ndarray:
    """Element matrices of ``(phi_a, w I_h(b) . grad phi_b)`` with ``w = u_h``."""
    bx, by = velocity(mesh.node_xy[:, 0], mesh.node_xy[:, 1])
    ue = u_full[mesh.elem]
    uq = ue @ mesh.phi.T
    bq = np.stack([bx[mesh.elem] @ mesh.phi.T, by[mesh.elem] @ mesh.phi.T], axis=2)
    coef = uq[:, :, None] * bq                                # (e, q, d)
    adv = np.einsum("eqd,qbd->eqb", coef, mesh.grad)          # (e, q, b)
    return mesh.weight * np.einsum("qa,eqb->eab", mesh.phi, adv)


def _full_matrix(mesh: _Mesh, local) -> sp.csr_matrix:
    """Assemble on all nodes, boundary included (used by tests)."""
    n = (mesh.N + 1) ** 2
    ne = mesh.elem.shape[0]
    local = np.broadcast_to(local, (ne, 4, 4))
    rows = np.repeat(mesh.elem, 4, axis=1).ravel()
    cols = np.tile(mesh.elem, (1, 4)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def mass_matrix(N: int, full: bool = False):
    mesh = _mesh(N)
    loc = _local_mass(mesh)
    if full:
        return _full_matrix(mesh, loc)
    return _scatter(mesh, np.broadcast_to(loc, (mesh.elem.shape[0], 4, 4)))


def stiffness_matrix(N: int, full: bool = False):
    mesh = _mesh(N)
    loc = _local_stiffness(mesh)
    if full:
        return _full_matrix(mesh, loc)
    return _scatter(mesh, np.broadcast_to(loc, (mesh.elem.shape[0], 4, 4)))


def convection_matrix(N: int, u_prev, full: bool = False):
    mesh = _mesh(N)
    loc = _local_convection(mesh, _to_full(mesh, u_prev))
    return _full_matrix(mesh, loc) if full else _scatter(mesh, loc)


def _to_full(mesh: _Mesh, u_int):
    u = np.zeros((mesh.N + 1) ** 2)
    u[mesh.interior] = u_int
    return u


def forcing(params: ProblemParams, coeffs) -> np.ndarray:
    """Interior load vector ``(phi_i, f)`` for the given mode amplitudes."""
    mesh = _mesh(params.N)
    fq = forcing_field(mesh.qp_xy[..., 0], mesh.qp_xy[..., 1], coeffs, params.C)
    local = mesh.weight * fq @ mesh.phi                        # (e, a)
    full = np.bincount(mesh.elem.ravel(), weights=local.ravel(),
                       minlength=(params.N + 1) ** 2)
    return full[mesh.interior]


def assemble_step(params: ProblemParams, u_prev, step: int, rng: Xoshiro256) -> StepSystem:
    """Assemble the system of time step ``step`` (1-based).

    Draws the step's forcing amplitudes from ``rng``.
    """
    mesh = _mesh(params.N)
    u_prev = np.asarray(u_prev, dtype=float)
    if u_prev.shape != (mesh.interior.size,):
        raise ValueError(f"u_prev must have {mesh.interior.size} entries")
    ne = mesh.elem.shape[0]
    local = (_local_mass(mesh) / params.dt + params.nu * _local_stiffness(mesh))
    local = np.broadcast_to(local, (ne, 4, 4)) + _local_convection(mesh, _to_full(mesh, u_prev))
    A = _scatter(mesh, local)
    M = mass_matrix(params.N)
    b = (M @ u_prev) / params.dt + forcing(params, forcing_coefficients(rng))
    return StepSystem(A, b, step)


# ---------------------------------------------------------------- sequences


@dataclass(frozen=True)
class SequenceConfig:
    """Solver and recycling settings of one sequence run.

    ``window`` is ``(m, s, interval)``; the recycling basis holds the ``s``
    dominant (or smallest, per ``svd_mode``) left singular vectors of the
    last ``m`` solutions, refreshed every ``interval`` steps.
    """

    method: RecycleMethod = RecycleMethod.NO_RECYCLE
    guess: Optional[InitialGuess] = None
    restart: int = 30
    rel_tol: float = 1e-8
    max_restarts: int = 500
    window_m: int = 20
    window_s: int = 20
    window_interval: int = 1
    svd_mode: SvdMode = SvdMode.LARGEST
    preconditioner: str = "ssor"
    omega: float = 1.0
    composition: Composition = Composition.PRECONDITIONER_AFTER_PROJECTOR

    def __post_init__(self):
        if self.preconditioner not in ("ssor", "identity"):
            raise ValueError("preconditioner must be 'ssor' or 'identity'")
        # validate the nested settings early
        self.gmres()
        SolutionWindow(self.window_m, self.window_interval, self.window_s, self.svd_mode)

    def gmres(self) -> GmresConfig:
        return GmresConfig(self.restart, self.rel_tol, self.max_restarts)

    @property
    def needs_space(self) -> bool:
        guess = self.guess if self.guess is not None else InitialGuess.zero()
        return self.method is not RecycleMethod.NO_RECYCLE or guess.kind == "project"


@dataclass
class SequenceResult:
    reports: list = field(default_factory=list)
    solutions: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iterations for r in self.reports])

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.reports)


def run_sequence(params: ProblemParams, cfg: SequenceConfig = SequenceConfig(),
                 keep_solutions: bool = False, on_step=None) -> SequenceResult:
    """Solve the whole time-step sequence starting from ``u = 0``.

    Each step assembles its system, builds the recycling space from the
    current basis (the last SVD refresh, or before the first one the
    orthonormalized most recent solutions), solves, and pushes the solution
    into the window.  A step whose restriction ``V^T A V`` is singular is
    solved without recycling and listed in ``fallbacks``.  ``on_step`` is
    called as ``on_step(step, system, x, report)``.
    """
    mesh = _mesh(params.N)
    rng = Xoshiro256(params.seed)
    gm = cfg.gmres()
    window = SolutionWindow(cfg.window_m, cfg.window_interval, cfg.window_s, cfg.svd_mode)
    basis = None
    u = np.zeros(mesh.interior.size)
    history: list = []
    out = SequenceResult()
    guess = cfg.guess if cfg.guess is not None else (
        InitialGuess.project() if cfg.method.augmented else InitialGuess.zero())
    for step in range(1, params.n_steps + 1):
        system = assemble_step(params, u, step, rng)
        precond = (SsorPrecond(system.A, cfg.omega) if cfg.preconditioner == "ssor"
                   else IdentityPrecond())
        raw = basis if basis is not None else window.cold_start_basis()
        space, method = None, cfg.method
        if cfg.needs_space and raw is not None:
            try:
                space = build_space(system.A, raw, needs_ls=method.needs_ls)
            except SingularRestrictionError:
                out.fallbacks.append(step)
        if space is None:
            method = RecycleMethod.NO_RECYCLE
        tic = time.perf_counter()
        x, report = recycled_solve(system.A, system.b, space, method, guess, precond, gm,
                                   history, cfg.composition)
        report.wall_time = time.perf_counter() - tic
        out.reports.append(report)
        if keep_solutions:
            out.solutions.append(x)
        if on_step is not None:
            on_step(step, system, x, report)
        history.insert(0, x)
        del history[4:]
        window.push(x)
        fresh = window.maybe_refresh()
        if fresh is not None:
            basis = fresh
        u = x
    return out


def iteration_stats(iterations, skip: int = 0) -> tuple[float, float]:
    """Mean and sample standard deviation of ``iterations[skip:]``."""
    it = np.asarray(iterations, dtype=float)[skip:]
    if it.size == 0:
        return float("nan"), float("nan")
    sd = float(np.std(it, ddof=1)) if it.size > 1 else 0.0
    return float(np.mean(it)), sd


def export_matrix_market(path, A: CsrMatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), A.to_scipy(), comment=comment, precision=17)


def export_vector(path, v) -> None:
    np.savetxt(Path(path), np.asarray(v, dtype=float), fmt="%.17g")
