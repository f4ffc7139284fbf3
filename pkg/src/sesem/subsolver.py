"""Bound-constrained derivative-free inner minimizer.

Nelder-Mead with every trial point projected onto the box.  Any callable
with the signature of :func:`minimize` can be passed to the reductions in
its place.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != self.upper.shape:
            raise ValueError("box bounds differ in shape")
        if np.any(self.lower > self.upper):
            raise ValueError("box lower bound exceeds upper bound")

    @classmethod
    def symmetric(cls, n, radius):
        return cls(np.full(n, -radius), np.full(n, radius))

    def project(self, x):
        return np.clip(x, self.lower, self.upper)

    def contains(self, x):
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    @property
    def width(self):
        return self.upper - self.lower


@dataclass
class InnerReport:
    x_best: np.ndarray
    f_best: float
    nevals: int
    converged: bool


class _Counted:
    def __init__(self, g, box, budget):
        self.g = g
        self.box = box
        self.budget = budget
        self.n = 0
        self.x_best = None
        self.f_best = math.inf

    @property
    def exhausted(self):
        return self.n >= self.budget

    def __call__(self, x):
        self.n += 1
        f = float(self.g(x))
        if math.isnan(f):
            f = math.inf
        if f < self.f_best:
            self.f_best, self.x_best = f, x.copy()
        return f


def minimize(g, x0, box: Box, budget: int, tol: float = 1e-8, f0: float | None = None,
             restarts: int = 1) -> InnerReport:
    """Minimize ``g`` over ``box`` starting from ``x0``.

    ``f0`` may carry the already known value ``g(x0)``; it is then not
    re-evaluated and not counted.  Stops when the budget is spent, when the
    simplex diameter falls below ``tol`` (after ``restarts`` rebuilds around
    the incumbent), or when all simplex values coincide.
    """
    x0 = np.array(x0, dtype=np.float64)
    n = x0.size
    if not box.contains(x0):
        raise ValueError("start point lies outside the box")
    if budget < n + 2:
        return InnerReport(x0, f0 if f0 is not None else math.nan, 0, False)

    fun = _Counted(g, box, budget)
    if f0 is None:
        f0 = fun(x0)
    else:
        f0 = float(f0)
        fun.f_best, fun.x_best = (f0 if not math.isnan(f0) else math.inf), x0.copy()

    edge = 0.1 * np.minimum(box.width, 1.0)

    def build(center, fc):
        pts = [center]
        vals = [fc]
        for i in range(n):
            if fun.exhausted:
                return None, None
            v = center.copy()
            if v[i] + edge[i] <= box.upper[i]:
                v[i] += edge[i]
            else:
                v[i] -= edge[i]
            v = box.project(v)
            pts.append(v)
            vals.append(fun(v))
        return np.array(pts), np.array(vals)

    sim, fs = build(x0, f0)
    converged = False
    restarts_left = restarts
    while sim is not None and not fun.exhausted:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if fs[-1] - fs[0] <= 0.0 and np.isfinite(fs[0]):
            converged = True
            break
        diam = np.max(np.abs(sim[1:] - sim[0]))
        if diam < tol:
            if restarts_left == 0:
                converged = True
                break
            restarts_left -= 1
            sim, fs = build(sim[0].copy(), fs[0])
            continue

        centroid = sim[:-1].mean(axis=0)
        worst = sim[-1]
        xr = box.project(centroid + (centroid - worst))
        fr = fun(xr)
        if fr < fs[0]:
            if fun.exhausted:
                sim[-1], fs[-1] = xr, fr
                break
            xe = box.project(centroid + 2.0 * (centroid - worst))
            fe = fun(xe)
            if fe < fr:
                sim[-1], fs[-1] = xe, fe
            else:
                sim[-1], fs[-1] = xr, fr
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fun.exhausted:
                break
            if fr < fs[-1]:
                xc = box.project(centroid + 0.5 * (xr - centroid))
            else:
                xc = box.project(centroid + 0.5 * (worst - centroid))
            fc = fun(xc)
            if fc < min(fr, fs[-1]):
                sim[-1], fs[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    if fun.exhausted:
                        break
                    sim[i] = box.project(sim[0] + 0.5 * (sim[i] - sim[0]))
                    fs[i] = fun(sim[i])

    return InnerReport(fun.x_best, fun.f_best, fun.n, converged)
