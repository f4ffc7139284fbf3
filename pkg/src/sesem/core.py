"""Problem abstraction, solver configuration, run records and seeded RNG."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

TERMINATIONS = ("target_reached", "feval_budget", "iter_budget", "stalled")
STEP_KINDS = ("reduction", "linesearch")
REDUCTION_KINDS = ("affine", "spline", "none")


class BudgetExhausted(RuntimeError):
    """Raised when a residual evaluation would exceed the evaluation budget.

    ``best`` holds ``(x, f, F)`` of the best point evaluated so far, or None.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class ResidualProblem:
    """Residual map F: R^n -> R^m with an evaluation counter.

    ``fn`` receives a float64 array of length ``n`` and must return an array of
    length ``m``.  When ``max_evals`` is set, the call that would exceed it
    raises :class:`BudgetExhausted` instead of evaluating.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n: int, m: int,
                 max_evals: int | None = None, name: str = ""):
        if n < 1 or m < 1:
            raise ValueError(f"need n >= 1 and m >= 1, got n={n}, m={m}")
        self.fn = fn
        self.n = int(n)
        self.m = int(m)
        self.max_evals = max_evals
        self.name = name
        self.eval_count = 0
        self.best = None
        self._lock = threading.Lock()

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"expected point of shape ({self.n},), got {x.shape}")
        with self._lock:
            if self.max_evals is not None and self.eval_count >= self.max_evals:
                raise BudgetExhausted(
                    f"evaluation budget of {self.max_evals} exhausted", self.best)
            self.eval_count += 1
        F = np.asarray(self.fn(x), dtype=np.float64)
        if F.shape != (self.m,):
            raise ValueError(f"residual has shape {F.shape}, expected ({self.m},)")
        return F

    def reset(self):
        self.eval_count = 0
        self.best = None


def half_ssq(F) -> float:
    """½‖F‖²."""
    F = np.asarray(F, dtype=np.float64)
    return 0.5 * float(F @ F)


def objective_value(problem: ResidualProblem, x) -> tuple[float, np.ndarray]:
    """Evaluate F once and return ``(f, F)`` with f = ½‖F‖²."""
    F = problem.evaluate(x)
    f = half_ssq(F)
    if not math.isfinite(f):
        f = math.inf
    if problem.best is None or f < problem.best[1]:
        problem.best = (np.array(x, dtype=np.float64), f, F)
    return f, F


def eta(k: int, eta0: float) -> float:
    """Summable slack sequence eta0 / (k+1)^2."""
    if k < 0:
        raise ValueError("iteration index must be non-negative")
    return eta0 / float(k + 1) ** 2


def default_eta0(f0: float) -> float:
    return 1e-3 * max(1.0, f0)


@dataclass
class SolverConfig:
    """Tunables of the reduction/line-search/acceleration loop.

    ``ssq_target`` is given on the ‖F‖² scale (the quantity reported by the
    stopping test); the half-scaled objective floor is ``f_target``.
    ``eta0=None`` selects ``1e-3 * max(1, f(x0))`` at solve time.
    ``subsolver_budget=None`` selects ``100 * n_red`` evaluations per spline
    subproblem and ``3 * n_red`` per affine one; the affine subproblems are
    cheap, throw-away probes whose value comes mostly from the secant step.
    """

    ssq_target: float = 0.0
    delta: float = 10.0
    gamma: float = 1e-4
    eta0: float | None = None
    memory_p: int = 1000
    n_red: int = 20
    reduction_kind: str = "spline"
    subsolver_budget: int | None = None
    subsolver_tol: float = 1e-8
    max_outer_iters: int = 100_000
    max_fevals: int = 10_000_000
    max_halvings: int = 60
    rcond: float = 1e-12
    accelerate: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.n_red < 1:
            raise ValueError(f"n_red must be >= 1, got {self.n_red}")
        if self.memory_p < 1:
            raise ValueError(f"memory_p must be >= 1, got {self.memory_p}")
        if not 0.0 < self.rcond < 1.0:
            raise ValueError(f"rcond must lie in (0, 1), got {self.rcond}")
        if self.eta0 is not None and not self.eta0 > 0:
            raise ValueError(f"eta0 must be positive, got {self.eta0}")
        if self.reduction_kind not in REDUCTION_KINDS:
            raise ValueError(f"unknown reduction kind {self.reduction_kind!r}")
        if self.reduction_kind == "spline" and (self.n_red < 2 or self.n_red % 2):
            raise ValueError(f"spline reduction needs an even n_red >= 2, got {self.n_red}")
        if self.max_halvings < 0 or self.max_outer_iters < 0 or self.max_fevals < 1:
            raise ValueError("budgets must be non-negative")
        if self.subsolver_budget is not None and self.subsolver_budget < 0:
            raise ValueError("subsolver_budget must be non-negative")

    @property
    def f_target(self) -> float:
        return 0.5 * self.ssq_target

    @property
    def inner_budget(self) -> int:
        if self.subsolver_budget is not None:
            return self.subsolver_budget
        return (3 if self.reduction_kind == "affine" else 100) * self.n_red


@dataclass
class TraceEntry:
    k: int
    f: float              # f(x^k)
    f_trial: float        # f(x_trial) after the accepted descent test
    f_next: float         # f(x^{k+1})
    eta: float
    alpha: float
    step_kind: str
    accel_used: bool
    fevals_cum: int

    @property
    def ssq(self) -> float:
        return 2.0 * self.f


@dataclass
class SolveResult:
    x_best: np.ndarray
    f_best: float
    outer_iters: int
    fevals: int
    accel_accepts: int
    accel_rejects: int
    termination: str
    trace: list[TraceEntry] = field(default_factory=list)
    f0: float = math.nan
    elapsed: float = 0.0

    @property
    def ssq_best(self) -> float:
        return 2.0 * self.f_best

    @property
    def success(self) -> bool:
        return self.termination == "target_reached"

    def summary(self) -> dict:
        return {
            "ssq_best": self.ssq_best,
            "f_best": self.f_best,
            "outer_iters": self.outer_iters,
            "fevals": self.fevals,
            "accel_accepts": self.accel_accepts,
            "accel_rejects": self.accel_rejects,
            "termination": self.termination,
            "time": self.elapsed,
        }


class RngStreams:
    """Independent generators keyed by purpose, all derived from one seed.

    Each purpose maps to a fixed spawn key, so the stream for a purpose does
    not depend on which other streams were used or in which order.
    """

    PURPOSES = {
        "direction": 1,
        "affine_matrix": 2,
        "spline_init": 3,
        "obs_mask": 4,
        "manning_perturb": 5,
    }

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: dict[str, np.random.Generator] = {}

    def __getitem__(self, purpose: str) -> np.random.Generator:
        if purpose not in self.PURPOSES:
            raise KeyError(f"unknown rng purpose {purpose!r}")
        gen = self._streams.get(purpose)
        if gen is None:
            seq = np.random.SeedSequence(self.seed, spawn_key=(self.PURPOSES[purpose],))
            gen = self._streams[purpose] = np.random.Generator(np.random.PCG64(seq))
        return gen
