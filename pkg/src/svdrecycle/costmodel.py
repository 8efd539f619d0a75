"""Operation counts for plain and recycled restarted GMRES.

The plain solver performs ``r`` cycles of ``n`` iterations on an ``m``-dimensional
system whose matrix has bandwidth ``b``.  The recycled solver performs ``r_tilde``
cycles with a ``k``-dimensional recycling space and recomputes that space from
a window of ``s`` solutions every ``ell`` time steps.

Note that the recycled count keeps a ``(k + j)^3`` term per iteration, so at
``k = 0`` it does not reduce to the plain count: it exceeds it by
``r_tilde * sum(j^3)``.  Both formulas are kept as they are.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable

import numpy as np

__all__ = [
    "CostParams",
    "cost_baseline",
    "cost_recycled",
    "min_interval",
    "interval_map",
    "REFERENCE_INPUTS",
]


@dataclass(frozen=True)
class CostParams:
    """Inputs of the cost model.

    Attributes
    ----------
    m : float
        System dimension.
    n : int
        Restart length.
    b : float
        Matrix bandwidth.
    k : int
        Recycling space dimension.
    s : int
        Number of stored solutions.
    r : float
        Number of restart cycles of the plain solver.
    r_tilde : float
        Number of restart cycles of the recycled solver, at most ``r``.
    ell : float
        Interval between two SVDs, ``math.inf`` for a space computed once.
    """

    m: float
    n: int
    b: float
    k: int
    s: int
    r: float
    r_tilde: float
    ell: float = math.inf

    def __post_init__(self):
        for name in ("m", "n", "b", "s", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if not 0 <= self.r_tilde <= self.r:
            raise ValueError("r_tilde must satisfy 0 <= r_tilde <= r")
        if not self.ell >= 0:
            raise ValueError("ell must be nonnegative")


REFERENCE_INPUTS = CostParams(m=1e6, n=30, b=300, k=10, s=60, r=3, r_tilde=3)


def cost_baseline(p: CostParams) -> float:
    """``r * sum_{j=1..n} (m b + m j)``."""
    j = np.arange(1, p.n + 1, dtype=float)
    return float(p.r * np.sum(p.m * p.b + p.m * j))


def _recycled_fixed(p: CostParams) -> float:
    """Recycled cost without the SVD term."""
    j = np.arange(1, p.n + 1, dtype=float)
    inner = np.sum(p.m * p.b + (j + p.k) * p.m + (p.k + j) ** 3)
    return float(p.r_tilde * inner + 2.0 * p.m * p.k + float(p.k) ** 3)


def _svd_work(p: CostParams) -> float:
    """SVD work per refresh, ``k s m + m^2 k``."""
    return float(p.k * p.s * p.m + p.m * p.m * p.k)


def cost_recycled(p: CostParams) -> float:
    """Recycled cost including the SVD amortized over ``ell`` steps.

    ``r_tilde * sum_j (m b + (j + k) m + (k + j)^3) + 2 m k + k^3
    + (k s m + m^2 k) / ell``; ``ell = inf`` drops the last term.

    Raises
    ------
    ValueError
        If ``ell`` is zero.
    """
    if p.ell == 0:
        raise ValueError("SVD interval must be nonzero")
    svd = 0.0 if math.isinf(p.ell) else _svd_work(p) / p.ell
    return _recycled_fixed(p) + svd


def min_interval(p: CostParams, ratio: float) -> float:
    """SVD interval at which recycled and plain costs are equal.

    ``r_tilde`` is set to ``r (1 - ratio)``; ``p.ell`` is ignored.  Any
    interval above the returned value makes recycling cheaper.

    Returns
    -------
    float
        The positive parity interval.  ``math.inf`` when the costs only
        meet as ``ell`` grows without bound.  A value ``<= 0`` when no
        positive interval gives parity: either recycling is more expensive
        even without SVDs (negative value), or it is cheaper for every
        interval (zero, only possible with ``k = 0``).
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError("ratio must lie in [0, 1]")
    q = replace(p, r_tilde=p.r * (1.0 - ratio), ell=math.inf)
    gap = cost_baseline(q) - _recycled_fixed(q)
    work = _svd_work(q)
    if gap == 0.0:
        return math.inf
    return work / gap


def interval_map(p: CostParams, ks: Iterable[int], ratios_percent: Iterable[float]):
    """Rows ``(k, ratio_percent, ell_min)`` over a grid, ``k`` varying slowest."""
    ratios = list(ratios_percent)
    rows = []
    for k in ks:
        q = replace(p, k=int(k))
        for pct in ratios:
            rows.append((int(k), float(pct), min_interval(q, pct / 100.0)))
    return rows
