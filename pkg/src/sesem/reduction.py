"""Dimension reductions that produce the trial point of an outer iteration.

* affine: minimize ‖F(x_k + M d)‖² over d for a fresh random n x n_red
  matrix M with entries uniform on [-1, 1];
* spline: minimize ‖F(x_k + d(v, p))‖² where d samples, on the uniform grid
  (i-1)/(n-1), a piecewise-linear function with free ordinates v and free
  interior node positions p.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import subsolver as _subsolver
from .core import objective_value
from .subsolver import Box


@dataclass
class AffineMap:
    base: np.ndarray
    M: np.ndarray

    def apply(self, d):
        return self.base + self.M @ d


@dataclass
class SplineParams:
    values: np.ndarray          # v_0 .. v_{kappa+1}
    nodes: np.ndarray           # p_1 .. p_kappa

    @property
    def kappa(self) -> int:
        return int(self.nodes.size)

    @property
    def n_red(self) -> int:
        return 2 * self.kappa + 2

    @classmethod
    def unpack(cls, z, kappa):
        z = np.asarray(z, dtype=np.float64)
        return cls(z[:kappa + 2], z[kappa + 2:])

    def pack(self):
        return np.concatenate([self.values, self.nodes])


@dataclass(frozen=True)
class CanonicalSpline:
    nodes: np.ndarray           # strictly increasing, 0 ... 1
    values: np.ndarray


@dataclass
class Proposal:
    x: np.ndarray
    F: np.ndarray
    f: float
    nevals: int


def sample_affine_map(x_k, n_red, rng) -> AffineMap:
    x_k = np.asarray(x_k, dtype=np.float64)
    n = x_k.size
    if not 1 <= n_red <= n:
        raise ValueError(f"need 1 <= n_red <= n, got n_red={n_red}, n={n}")
    return AffineMap(x_k.copy(), rng.uniform(-1.0, 1.0, size=(n, n_red)))


def canonicalize(params: SplineParams) -> CanonicalSpline:
    """Sort the nodes (0, p_1..p_kappa, 1) and merge exact ties by averaging
    their ordinates."""
    p = np.asarray(params.nodes, dtype=np.float64)
    v = np.asarray(params.values, dtype=np.float64)
    if v.size != p.size + 2:
        raise ValueError(f"{p.size} interior nodes need {p.size + 2} ordinates, got {v.size}")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("interior nodes must lie in [0, 1]")
    pos = np.concatenate([[0.0], p, [1.0]])
    val = np.concatenate([v[:1], v[1:-1], v[-1:]])
    uniq, inverse = np.unique(pos, return_inverse=True)
    if uniq.size == pos.size:
        order = np.argsort(pos, kind="stable")
        return CanonicalSpline(pos[order], val[order])
    sums = np.bincount(inverse, weights=val, minlength=uniq.size)
    counts = np.bincount(inverse, minlength=uniq.size)
    return CanonicalSpline(uniq, sums / counts)


def eval_spline(spline: CanonicalSpline, t):
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise ValueError("spline argument must lie in [0, 1]")
    out = np.interp(t_arr, spline.nodes, spline.values)
    return float(out) if np.ndim(out) == 0 else out


def spline_displacement(spline: CanonicalSpline, n: int) -> np.ndarray:
    if n < 2:
        raise ValueError("spline displacement needs n >= 2")
    return np.interp(np.arange(n) / (n - 1.0), spline.nodes, spline.values)


class _ReducedObjective:
    """g(z) = ‖F(lift(z))‖², remembering the best lifted point and residual."""

    def __init__(self, problem, lift, x_k, F_k, f_k):
        self.problem = problem
        self.lift = lift
        self.nevals = 0
        self.best = (np.asarray(x_k, dtype=np.float64), np.asarray(F_k), f_k)

    def __call__(self, z):
        x = self.lift(z)
        self.nevals += 1
        f, F = objective_value(self.problem, x)
        if f < self.best[2]:
            self.best = (x, F, f)
        return 2.0 * f


def _run(problem, lift, z0, box, x_k, F_k, f_k, minimize, budget, tol):
    g = _ReducedObjective(problem, lift, x_k, F_k, f_k)
    if budget > 0:
        minimize(g, z0, box, budget, tol=tol, f0=2.0 * f_k)
    x, F, f = g.best
    return Proposal(x, F, f, g.nevals)


def propose_affine(problem, x_k, F_k, f_k, amap: AffineMap, budget: int, radius: float,
                   minimize=None, tol: float = 1e-8) -> Proposal:
    """Search x_k + M d for d in [-radius, radius]^n_red, starting at d = 0."""
    minimize = minimize or _subsolver.minimize
    n_red = amap.M.shape[1]
    return _run(problem, amap.apply, np.zeros(n_red), Box.symmetric(n_red, radius),
                x_k, F_k, f_k, minimize, budget, tol)


def propose_spline(problem, x_k, F_k, f_k, kappa: int, budget: int, radius: float, rng,
                   minimize=None, tol: float = 1e-8) -> Proposal:
    """Search x_k + d(v, p) with v in [-radius, radius], p in [0, 1], starting
    at v = 0 and uniformly random p."""
    minimize = minimize or _subsolver.minimize
    x_k = np.asarray(x_k, dtype=np.float64)
    n = x_k.size
    if n < 2:
        raise ValueError("spline reduction needs n >= 2")
    p0 = rng.random(kappa)
    z0 = np.concatenate([np.zeros(kappa + 2), p0])
    box = Box(np.concatenate([np.full(kappa + 2, -radius), np.zeros(kappa)]),
              np.concatenate([np.full(kappa + 2, radius), np.ones(kappa)]))

    def lift(z):
        return x_k + spline_displacement(canonicalize(SplineParams.unpack(z, kappa)), n)

    return _run(problem, lift, z0, box, x_k, F_k, f_k, minimize, budget, tol)


class AffineReduction:
    kind = "affine"

    def __init__(self, n_red, minimize=None):
        self.n_red = n_red
        self.minimize = minimize

    def propose(self, problem, x_k, F_k, f_k, config, streams) -> Proposal:
        amap = sample_affine_map(x_k, min(self.n_red, x_k.size), streams["affine_matrix"])
        return propose_affine(problem, x_k, F_k, f_k, amap, config.inner_budget, config.delta,
                              self.minimize, config.subsolver_tol)


class SplineReduction:
    kind = "spline"

    def __init__(self, n_red, minimize=None):
        if n_red < 2 or n_red % 2:
            raise ValueError(f"spline reduction needs an even n_red >= 2, got {n_red}")
        self.kappa = (n_red - 2) // 2
        self.minimize = minimize

    def propose(self, problem, x_k, F_k, f_k, config, streams) -> Proposal:
        return propose_spline(problem, x_k, F_k, f_k, self.kappa, config.inner_budget,
                              config.delta, streams["spline_init"], self.minimize,
                              config.subsolver_tol)


def make_reduction(kind, n_red, minimize=None):
    if kind == "affine":
        return AffineReduction(n_red, minimize)
    if kind == "spline":
        return SplineReduction(n_red, minimize)
    if kind == "none":
        return None
    raise ValueError(f"unknown reduction kind {kind!r}")
