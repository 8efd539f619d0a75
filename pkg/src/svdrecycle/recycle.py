"""Recycling spaces, their projectors, and recycled GMRES solves.

A recycling space is an orthonormal basis ``V`` together with ``W = A V``
and the factored restriction ``E = V^T A V``.  Three projectors act on it:

* orthogonal: ``I - V V^T``
* oblique:    ``I - W E^{-1} V^T``
* LS:         ``I - W (W^T W)^{-1} W^T``

Each projector gives an augmented method (Krylov space started from the
preconditioned residual) and a deflated method (started from the projected
preconditioned residual).
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .krylov import (Augmentation, GmresConfig, LinearOperator, SolveReport,
                     solve_augmented, solve_restarted)
from .precond import IdentityPrecond
from .sparsela import (CsrMatrix, LuFactors, lu_factor, lu_solve,
                       mgs_orthonormalize)

__all__ = [
    "SingularRestrictionError",
    "RecycleMethod",
    "InitialGuess",
    "Composition",
    "RecyclingSpace",
    "build_space",
    "proj_orthogonal",
    "proj_oblique",
    "proj_ls",
    "shift_spectrum_apply",
    "initial_guess_extrapolate",
    "initial_guess_project",
    "recycled_solve",
]

SINGULAR_PIVOT_RATIO = 1e-12


class SingularRestrictionError(ValueError):
    """``V^T A V`` is numerically singular."""

    def __init__(self, pivot_ratio: float):
        super().__init__(f"restriction V^T A V is singular (pivot ratio {pivot_ratio:.3e})")
        self.pivot_ratio = pivot_ratio


class RecycleMethod(enum.Enum):
    NO_RECYCLE = "none"
    AUGMENTED_ORTHOGONAL = "aug-orthogonal"
    AUGMENTED_OBLIQUE = "aug-oblique"
    AUGMENTED_LS = "aug-ls"
    DEFLATED_ORTHOGONAL = "def-orthogonal"
    DEFLATED_OBLIQUE = "def-oblique"
    DEFLATED_LS = "def-ls"

    @property
    def projector(self) -> Optional[str]:
        if self is RecycleMethod.NO_RECYCLE:
            return None
        return self.value.split("-", 1)[1]

    @property
    def deflated(self) -> bool:
        return self.value.startswith("def-")

    @property
    def augmented(self) -> bool:
        return self.value.startswith("aug-")

    @property
    def needs_ls(self) -> bool:
        return self.projector == "ls"


class Composition(enum.Enum):
    """Order of the recycling projector and the preconditioner."""

    PROJECTOR_AFTER_PRECONDITIONER = "projector-after-preconditioner"
    PRECONDITIONER_AFTER_PROJECTOR = "preconditioner-after-projector"


@dataclass(frozen=True)
class InitialGuess:
    kind: str = "zero"
    order: int = 0

    def __post_init__(self):
        if self.kind not in ("zero", "extrapolate", "project"):
            raise ValueError(f"unknown initial guess {self.kind!r}")
        if self.kind == "extrapolate" and self.order not in (1, 2, 3):
            raise ValueError("extrapolation order must be 1, 2 or 3")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def extrapolate(cls, order: int):
        return cls("extrapolate", order)

    @classmethod
    def project(cls):
        return cls("project")

    @classmethod
    def parse(cls, text: str) -> "InitialGuess":
        """Parse ``zero``, ``project`` or ``extrapolate:<order>``."""
        kind, _, order = text.partition(":")
        if kind == "extrapolate":
            return cls.extrapolate(int(order or 1))
        if order:
            raise ValueError(f"unexpected order in initial guess {text!r}")
        return cls(kind)

    def __str__(self):
        return f"extrapolate:{self.order}" if self.kind == "extrapolate" else self.kind


def default_guess(method: RecycleMethod) -> InitialGuess:
    """Projection for augmented methods, zero otherwise."""
    return InitialGuess.project() if method.augmented else InitialGuess.zero()


@dataclass(frozen=True, eq=False)
class RecyclingSpace:
    V: np.ndarray
    W: np.ndarray
    E_lu: LuFactors
    N_lu: Optional[LuFactors]

    @property
    def s(self) -> int:
        return self.V.shape[1]


def build_space(A: CsrMatrix, raw_basis, needs_ls: bool = False,
                singular_ratio: float = SINGULAR_PIVOT_RATIO) -> RecyclingSpace:
    """Orthonormalize ``raw_basis`` and factor the restricted matrices."""
    raw = np.asarray(raw_basis, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.shape[0] != A.n_rows or raw.shape[1] == 0:
        raise ValueError("raw basis must be a nonempty matrix with A.n_rows rows")
    V, rank = mgs_orthonormalize(raw)
    if rank == 0:
        raise ValueError("raw basis has no nonzero column")
    W = np.asfortranarray(A.to_scipy() @ V)
    try:
        E_lu = lu_factor(V.T @ W)
    except ValueError:
        raise SingularRestrictionError(0.0) from None
    ratio = E_lu.min_pivot / E_lu.max_pivot
    if ratio <= singular_ratio:
        raise SingularRestrictionError(ratio)
    N_lu = lu_factor(W.T @ W) if needs_ls else None
    return RecyclingSpace(V, W, E_lu, N_lu)


def proj_orthogonal(S: RecyclingSpace, x):
    return x - S.V @ (S.V.T @ x)


def proj_oblique(S: RecyclingSpace, x):
    return x - S.W @ lu_solve(S.E_lu, S.V.T @ x)


def proj_ls(S: RecyclingSpace, x):
    if S.N_lu is None:
        raise ValueError("recycling space was built without LS factors")
    return x - S.W @ lu_solve(S.N_lu, S.W.T @ x)


_PROJECTORS = {
    "orthogonal": proj_orthogonal,
    "oblique": proj_oblique,
    "ls": proj_ls,
}


def shift_spectrum_apply(S: RecyclingSpace, lambda_star: float, x):
    """Apply ``I - A V E^{-1} V^T + lambda* V E^{-1} V^T``."""
    t = lu_solve(S.E_lu, S.V.T @ x)
    return x - S.W @ t + lambda_star * (S.V @ t)


# Extrapolation weights on x^{i-1}, x^{i-2}, ... (newest first).
_EXTRAPOLATION = {
    1: (2.0, -1.0),
    2: (3.0, -3.0, 1.0),
    3: (4.0, -6.0, 4.0, -1.0),
}


def initial_guess_extrapolate(history: Sequence[np.ndarray], order: int):
    """Polynomial extrapolation from previous solutions, newest first.

    With fewer than ``order + 1`` solutions the highest feasible order is
    used; a single solution is returned as is.
    """
    if order not in _EXTRAPOLATION:
        raise ValueError("extrapolation order must be 1, 2 or 3")
    if len(history) == 0:
        raise ValueError("extrapolation needs at least one previous solution")
    order = min(order, len(history) - 1)
    if order == 0:
        return np.array(history[0], dtype=float, copy=True)
    out = np.zeros_like(np.asarray(history[0], dtype=float))
    for w, x in zip(_EXTRAPOLATION[order], history):
        out += w * np.asarray(x, dtype=float)
    return out


def initial_guess_project(S: RecyclingSpace, b):
    """Galerkin guess ``V E^{-1} V^T b`` (residual orthogonal to ``V``)."""
    return S.V @ lu_solve(S.E_lu, S.V.T @ b)


def _coef_map(S: RecyclingSpace, projector: str):
    """Matrix ``G`` with ``P u = u - Y G u``, and ``Y``."""
    if projector == "orthogonal":
        return S.V.T, S.V
    if projector == "oblique":
        return lu_solve(S.E_lu, S.V.T), S.W
    return lu_solve(S.N_lu, S.W.T), S.W


def recycled_solve(A: CsrMatrix, b, space: Optional[RecyclingSpace],
                   method: RecycleMethod = RecycleMethod.NO_RECYCLE,
                   guess: Optional[InitialGuess] = None, precond=None,
                   cfg: GmresConfig = GmresConfig(), history: Sequence[np.ndarray] = (),
                   composition: Composition = Composition.PRECONDITIONER_AFTER_PROJECTOR):
    """Solve ``A x = b`` with restarted GMRES and a recycling method.

    The Krylov space is generated by ``M^{-1} P A`` (or ``P M^{-1} A`` with
    the other ``composition``), ``P`` being the projector of ``method``,
    started from ``M^{-1} r`` for augmented methods and from its projection
    for deflated ones, ``r`` being the residual at the cycle start.  Every
    iterate minimizes the preconditioned residual ``||M^{-1}(b - A x)||``
    over ``x_start + span(V) + K_k``, so the components along ``V`` that the
    projected operator cannot see are solved for together with the Krylov
    coefficients.

    ``space`` may be given with ``NO_RECYCLE`` to serve the projection
    guess only.  A projection guess without a space falls back to zero, an
    extrapolation without history to zero as well.

    Returns
    -------
    x : ndarray
    report : SolveReport
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if A.shape != (n, n):
        raise ValueError("matrix and right-hand side dimensions differ")
    if method is not RecycleMethod.NO_RECYCLE and space is None:
        raise ValueError(f"method {method.value} needs a recycling space")
    if method.needs_ls and space.N_lu is None:
        raise ValueError("LS methods need a space built with needs_ls=True")
    guess = guess if guess is not None else default_guess(method)
    precond = precond if precond is not None else IdentityPrecond()
    mat = A.to_scipy()
    tic = time.perf_counter()

    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        report = SolveReport(true_relative_residual=0.0, converged=True)
        return np.zeros(n), report

    if guess.kind == "project" and space is not None:
        x0 = initial_guess_project(space, b)
    elif guess.kind == "extrapolate" and len(history):
        x0 = initial_guess_extrapolate(history, guess.order)
    else:
        x0 = np.zeros(n)

    def residual(x):
        return np.linalg.norm(b - mat @ x) / b_norm

    rhs = precond(b)
    if method is RecycleMethod.NO_RECYCLE:
        op = LinearOperator(lambda v: precond(mat @ v), n)
        return _finish(solve_restarted(op, rhs, x0, cfg, residual), tic)

    G, Y = _coef_map(space, method.projector)
    Z = _as_columns(precond(space.W))
    deflated = method.deflated

    if composition is Composition.PROJECTOR_AFTER_PRECONDITIONER:
        def split(q):
            u = precond(mat @ q)
            c = G @ u
            return u - Y @ c, c

        def start(x):
            z = precond(b - mat @ x)
            if not deflated:
                return z, np.zeros(Y.shape[1])
            c = G @ z
            return z - Y @ c, c
        Yhat = Y
    else:
        Yhat = _as_columns(precond(Y))

        def split(q):
            u = mat @ q
            c = G @ u
            return precond(u - Y @ c), c

        def start(x):
            r = b - mat @ x
            if not deflated:
                return precond(r), np.zeros(Y.shape[1])
            c = G @ r
            return precond(r - Y @ c), c

    aug = Augmentation(space.V, Z, Yhat, split)
    result = solve_augmented(aug, start, np.linalg.norm(rhs), x0, cfg, residual)
    return _finish(result, tic)


def _as_columns(X):
    X = np.asarray(X, dtype=float)
    return X[:, None] if X.ndim == 1 else X


def _finish(result, tic):
    x, report = result
    report.wall_time = time.perf_counter() - tic
    return x, report
