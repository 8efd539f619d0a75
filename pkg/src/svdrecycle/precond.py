"""Stationary left preconditioners: identity and SSOR."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .sparsela import CsrMatrix

__all__ = ["IdentityPrecond", "SsorPrecond", "identity_apply", "ssor_apply"]


def identity_apply(r):
    return r


class IdentityPrecond:
    def apply(self, r):
        return r

    __call__ = apply

    def __repr__(self):
        return "IdentityPrecond()"


class SsorPrecond:
    """Symmetric successive over-relaxation.

    Applies ``z = M^{-1} r`` with
    ``M = (D + wL) D^{-1} (D + wU) / (w (2 - w))``, i.e. one forward sweep,
    a diagonal scaling and one backward sweep.  The triangular sweeps use
    SuperLU factorizations of the triangular factors in natural ordering,
    which reproduce plain substitution.  ``apply`` also accepts a matrix
    of right-hand sides, one per column.
    """

    def __init__(self, A: CsrMatrix, omega: float = 1.0):
        if not 0.0 < omega < 2.0:
            raise ValueError("SSOR relaxation factor must lie in (0, 2)")
        mat = A.to_scipy()
        diag = mat.diagonal()
        if np.any(diag == 0.0):
            raise ValueError("SSOR needs a nonzero diagonal")
        self.A = A
        self.omega = float(omega)
        self.diag = diag
        D = sp.diags(diag)
        lower = (D + omega * sp.tril(mat, k=-1)).tocsc()
        upper = (D + omega * sp.triu(mat, k=1)).tocsc()
        opts = dict(permc_spec="NATURAL", diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True))
        self._lower = spla.splu(lower, **opts)
        self._upper = spla.splu(upper, **opts)
        self._scale = omega * (2.0 - omega)

    def apply(self, r):
        r = np.asarray(r, dtype=float)
        y = self._lower.solve(r)
        d = self.diag if r.ndim == 1 else self.diag[:, None]
        return self._scale * self._upper.solve(d * y)

    __call__ = apply

    def __repr__(self):
        return f"SsorPrecond(n={self.A.n_rows}, omega={self.omega})"


def ssor_apply(P: SsorPrecond, r):
    return P.apply(r)
