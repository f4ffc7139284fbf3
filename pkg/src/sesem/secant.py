"""Sequential-secant acceleration and its minimum-norm least-squares kernel."""
from __future__ import annotations

import numpy as np


def min_norm_lstsq(Y, r, rcond: float = 1e-12) -> np.ndarray:
    """Minimum-norm minimizer of ‖Y z - r‖₂, i.e. ``pinv(Y) @ r``.

    Uses LAPACK's SVD-based least-squares driver; singular values at or below
    ``rcond * sigma_max`` are treated as zero.
    """
    Y = np.asarray(Y, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] != r.shape[0]:
        raise ValueError(f"shape mismatch: Y {Y.shape}, r {r.shape}")
    q = Y.shape[1]
    if q == 0 or Y.shape[0] == 0 or not np.any(Y):
        return np.zeros(q)
    z, _, rank, _ = np.linalg.lstsq(Y, r, rcond=rcond)
    if rank == 0:
        return np.zeros(q)
    return z


class SecantHistory:
    """FIFO of accepted (s, y) pairs holding at most ``capacity`` of them.

    Pairs live as columns of preallocated buffers; :meth:`matrices` returns
    them oldest first.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._S = None
        self._Y = None
        self._head = 0          # slot of the oldest pair
        self._len = 0

    def __len__(self):
        return self._len

    @property
    def pairs(self):
        return [(self._S[:, c].copy(), self._Y[:, c].copy()) for c in self._order()]

    def _order(self):
        return [(self._head + i) % self.capacity for i in range(self._len)]

    def push(self, s, y):
        s = np.asarray(s, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self._S is None:
            self._S = np.empty((s.size, self.capacity), order="F")
            self._Y = np.empty((y.size, self.capacity), order="F")
        elif s.shape != (self._S.shape[0],) or y.shape != (self._Y.shape[0],):
            raise ValueError("secant pair dimensions changed")
        if self._len < self.capacity:
            slot = (self._head + self._len) % self.capacity
            self._len += 1
        else:
            slot = self._head
            self._head = (self._head + 1) % self.capacity
        self._S[:, slot] = s
        self._Y[:, slot] = y

    def check_dims(self, n, m):
        if self._S is not None and (self._S.shape[0] != n or self._Y.shape[0] != m):
            raise ValueError("secant history does not match the current problem dimensions")

    def matrices(self, extra=None):
        """S and Y with columns oldest to newest, optionally followed by one
        extra pair; (None, None) when empty."""
        q = self._len + (extra is not None)
        if q == 0:
            return None, None
        if extra is not None:
            n, m = extra[0].size, extra[1].size
        else:
            n, m = self._S.shape[0], self._Y.shape[0]
        S = np.empty((n, q), order="F")
        Y = np.empty((m, q), order="F")
        if self._len:
            first = self.capacity - self._head
            if self._head + self._len <= self.capacity:
                S[:, :self._len] = self._S[:, self._head:self._head + self._len]
                Y[:, :self._len] = self._Y[:, self._head:self._head + self._len]
            else:
                S[:, :first] = self._S[:, self._head:]
                Y[:, :first] = self._Y[:, self._head:]
                rest = self._len - first
                S[:, first:self._len] = self._S[:, :rest]
                Y[:, first:self._len] = self._Y[:, :rest]
        if extra is not None:
            S[:, -1] = extra[0]
            Y[:, -1] = extra[1]
        return S, Y


def push_accepted(history: SecantHistory, x_k, x_next, F_k, F_next):
    """Record the completed iteration's displacement and residual change."""
    history.push(np.asarray(x_next) - np.asarray(x_k), np.asarray(F_next) - np.asarray(F_k))


def accelerate(history: SecantHistory, x_k, F_k, x_trial, F_trial, rcond: float = 1e-12):
    """Secant extrapolation x_k - S pinv(Y) F_k, or None if there is nothing to use.

    The trial displacement is appended as the newest column.  Pairs whose
    residual difference is exactly zero carry no information and are dropped.
    """
    x_k = np.asarray(x_k, dtype=np.float64)
    F_k = np.asarray(F_k, dtype=np.float64)
    s_trial = np.asarray(x_trial, dtype=np.float64) - x_k
    y_trial = np.asarray(F_trial, dtype=np.float64) - F_k
    history.check_dims(s_trial.size, y_trial.size)
    S, Y = history.matrices((s_trial, y_trial))
    live = np.any(Y != 0.0, axis=0)
    if not live.any():
        return None
    if not live.all():
        S, Y = S[:, live], Y[:, live]
    z = min_norm_lstsq(Y, F_k, rcond)
    return x_k - S @ z


def accept_accel(f_accel: float, f_trial: float) -> bool:
    """Keep the accelerated point when it is no worse than the trial (NaN rejects)."""
    return bool(f_accel <= f_trial)
