"""Sliding window of previous solutions and SVD-based basis selection."""
from __future__ import annotations

import enum
from collections import deque
from typing import Optional

import numpy as np

from .sparsela import SVD_RANK_TOL, mgs_orthonormalize, thin_svd

__all__ = ["SvdMode", "SolutionWindow", "push_solution", "maybe_refresh"]


class SvdMode(enum.Enum):
    LARGEST = "largest"
    SMALLEST = "smallest"


class SolutionWindow:
    """The ``m`` most recent solutions and a refresh schedule.

    Every ``interval`` pushes, :meth:`maybe_refresh` returns the ``s`` left
    singular vectors of the window matrix (oldest column first) with the
    largest singular values, or with the smallest nonzero ones in
    ``SMALLEST`` mode.

    Parameters
    ----------
    capacity : int
        Number of stored solutions ``m``.
    interval : int
        Refresh period ``l``, counted in pushes.
    target_dim : int
        Basis dimension ``s``, at most ``capacity``.
    mode : SvdMode
    """

    def __init__(self, capacity: int, interval: int, target_dim: int,
                 mode: SvdMode = SvdMode.LARGEST):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        if interval < 1:
            raise ValueError("refresh interval must be >= 1")
        if not 1 <= target_dim <= capacity:
            raise ValueError("target dimension must satisfy 1 <= s <= m")
        self.capacity = int(capacity)
        self.interval = int(interval)
        self.target_dim = int(target_dim)
        self.mode = SvdMode(mode)
        self.step_counter = 0
        self._store: deque = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self._store)

    @property
    def solutions(self) -> list:
        """Stored solutions, oldest first."""
        return list(self._store)

    def matrix(self) -> np.ndarray:
        """Window matrix with one solution per column, oldest first."""
        if not self._store:
            raise ValueError("window is empty")
        return np.column_stack(self._store)

    def push(self, x) -> None:
        x = np.array(x, dtype=float, copy=True)
        if x.ndim != 1:
            raise ValueError("solutions must be vectors")
        if self._store and x.size != self._store[0].size:
            raise ValueError(f"solution of length {self._store[0].size} expected, got {x.size}")
        self._store.append(x)
        self.step_counter += 1

    def refresh_due(self) -> bool:
        return (self.step_counter > 0 and self.step_counter % self.interval == 0
                and len(self._store) >= max(self.target_dim, 2))

    def maybe_refresh(self) -> Optional[np.ndarray]:
        """Return a new raw basis when a refresh is due, else ``None``."""
        if not self.refresh_due():
            return None
        return self.svd_basis()

    def svd_basis(self) -> np.ndarray:
        svd = thin_svd(self.matrix(), rank_tol=SVD_RANK_TOL)
        U = svd.left_vectors
        s = min(self.target_dim, U.shape[1])
        if self.mode is SvdMode.LARGEST:
            return U[:, :s].copy()
        # thin_svd already dropped the numerically zero values
        return U[:, U.shape[1] - s:][:, ::-1].copy()

    def cold_start_basis(self) -> Optional[np.ndarray]:
        """Orthonormalized most recent ``min(len, s)`` solutions.

        Serves as the recycling basis before the first refresh.
        """
        if not self._store:
            return None
        recent = list(self._store)[-self.target_dim:]
        Q, rank = mgs_orthonormalize(np.column_stack(recent))
        return Q if rank else None


def push_solution(w: SolutionWindow, x) -> None:
    w.push(x)


def maybe_refresh(w: SolutionWindow) -> Optional[np.ndarray]:
    return w.maybe_refresh()
