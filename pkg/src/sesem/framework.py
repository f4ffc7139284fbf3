"""Outer loop: reduction step, random-direction line search fallback and
secant acceleration, with summable-slack descent tests."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import secant
from .core import (BudgetExhausted, ResidualProblem, RngStreams, SolveResult, SolverConfig,
                   TraceEntry, default_eta0, eta, objective_value)
from .reduction import make_reduction

log = logging.getLogger(__name__)


# Callables invoked with every finished SolveResult (used to audit runs).
RUN_HOOKS: list = []


class Stalled(RuntimeError):
    pass


@dataclass
class IterationState:
    k: int
    x: np.ndarray
    F: np.ndarray
    f: float
    eta: float


@dataclass
class StepOutcome:
    x_trial: np.ndarray
    F_trial: np.ndarray
    f_trial: float
    alpha: float
    kind: str


def reduction_descent_test(f_trial, f_k, eta_k, gamma, f_target) -> bool:
    return f_trial <= f_k + eta_k - gamma * (f_k - f_target)


def linesearch_descent_test(f_trial, f_k, eta_k, gamma, alpha, f_target) -> bool:
    return f_trial <= f_k + eta_k - gamma * alpha * alpha * (f_k - f_target)


def random_unit_vector(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the unit sphere of R^n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    while True:
        v = rng.standard_normal(n)
        nrm = np.linalg.norm(v)
        if nrm > 0.0 and np.isfinite(nrm):
            return v / nrm


def linear_direction(v, delta: float) -> np.ndarray:
    """Minimizer of <v, d> over the Euclidean ball of radius delta."""
    return -delta * np.asarray(v, dtype=np.float64)


def fallback_linesearch(state: IterationState, v, delta, config: SolverConfig,
                        problem: ResidualProblem) -> StepOutcome:
    """Backtrack alpha = 1, 1/2, 1/4, ... along d = -delta v until the
    alpha²-scaled descent test holds."""
    d = linear_direction(v, delta)
    alpha = 1.0
    for _ in range(config.max_halvings + 1):
        x_trial = state.x + alpha * d
        f_trial, F_trial = objective_value(problem, x_trial)
        if linesearch_descent_test(f_trial, state.f, state.eta, config.gamma, alpha,
                                   config.f_target):
            return StepOutcome(x_trial, F_trial, f_trial, alpha, "linesearch")
        alpha *= 0.5
    raise Stalled(f"line search failed after {config.max_halvings} halvings at k={state.k}")


def solve(problem: ResidualProblem, config: SolverConfig, x0=None, reduction="config",
          minimize=None, accelerator=secant.accelerate) -> SolveResult:
    """Run the outer loop from ``x0`` (default: the origin).

    ``reduction`` defaults to the strategy named by ``config.reduction_kind``;
    pass ``None`` to disable reductions (pure random-direction line search),
    or any object with a ``propose`` method.  ``accelerator=None`` or
    ``config.accelerate=False`` disables the secant step.
    """
    if problem.n < 2:
        raise ValueError("the outer solver needs n >= 2")
    saved_cap = problem.max_evals
    try:
        result = _solve(problem, config, x0, reduction, minimize, accelerator)
    finally:
        problem.max_evals = saved_cap
    for hook in RUN_HOOKS:
        hook(result)
    return result


def _solve(problem, config, x0, reduction, minimize, accelerator):
    t_start = time.perf_counter()
    if reduction == "config":
        reduction = make_reduction(config.reduction_kind, config.n_red, minimize)
    if not config.accelerate:
        accelerator = None
    streams = RngStreams(config.seed)
    fevals_at_start = problem.eval_count
    if config.max_fevals is not None:
        limit = fevals_at_start + config.max_fevals
        problem.max_evals = limit if problem.max_evals is None else min(problem.max_evals, limit)

    x = np.zeros(problem.n) if x0 is None else np.array(x0, dtype=np.float64)
    trace: list[TraceEntry] = []
    accepts = rejects = 0
    try:
        f, F = objective_value(problem, x)
    except BudgetExhausted:
        return SolveResult(x, math.nan, 0, problem.eval_count - fevals_at_start, 0, 0,
                           "feval_budget", trace, elapsed=time.perf_counter() - t_start)
    f0 = f
    eta0 = config.eta0 if config.eta0 is not None else default_eta0(f0)
    history = secant.SecantHistory(config.memory_p)
    k = 0
    termination = None
    while termination is None:
        if 2.0 * f <= config.ssq_target:
            termination = "target_reached"
            break
        if k >= config.max_outer_iters:
            termination = "iter_budget"
            break
        state = IterationState(k, x, F, f, eta(k, eta0))
        try:
            outcome = None
            if reduction is not None:
                prop = reduction.propose(problem, x, F, f, config, streams)
                if (not np.array_equal(prop.x, x)
                        and reduction_descent_test(prop.f, f, state.eta, config.gamma,
                                                   config.f_target)):
                    outcome = StepOutcome(prop.x, prop.F, prop.f, 1.0, "reduction")
            if outcome is None:
                v = random_unit_vector(problem.n, streams["direction"])
                outcome = fallback_linesearch(state, v, config.delta, config, problem)

            x_next, F_next, f_next = outcome.x_trial, outcome.F_trial, outcome.f_trial
            used = False
            if accelerator is not None and k > 0:
                cand = accelerator(history, x, F, outcome.x_trial, outcome.F_trial, config.rcond)
                if cand is not None:
                    if np.all(np.isfinite(cand)):
                        f_acc, F_acc = objective_value(problem, cand)
                        if secant.accept_accel(f_acc, outcome.f_trial):
                            x_next, F_next, f_next = cand, F_acc, f_acc
                            used = True
                    if used:
                        accepts += 1
                    else:
                        rejects += 1
        except BudgetExhausted:
            termination = "feval_budget"
            break
        except Stalled as exc:
            log.info("%s", exc)
            termination = "stalled"
            break

        secant.push_accepted(history, x, x_next, F, F_next)
        trace.append(TraceEntry(k, f, outcome.f_trial, f_next, state.eta, outcome.alpha,
                                outcome.kind, used, problem.eval_count - fevals_at_start))
        x, F, f = x_next, F_next, f_next
        k += 1

    return SolveResult(x.copy(), f, k, problem.eval_count - fevals_at_start, accepts, rejects,
                       termination, trace, f0=f0, elapsed=time.perf_counter() - t_start)


def check_invariants(result: SolveResult, atol: float = 0.0) -> list[str]:
    """Return human-readable violations of the run-trace invariants:

    * f(x^{k+1}) <= f(x^k) + eta_k,
    * f(x^k) <= f(x^0) + sum_{j<k} eta_j,
    * f(x^{k+1}) <= f(x_trial),
    * consecutive entries agree on f(x^{k+1}), reduction steps have alpha = 1
      and line-search steps use alpha = 2^-j.
    """
    bad = []
    slack = 0.0
    trace = result.trace
    for pos, e in enumerate(trace):
        if not e.f_next <= e.f + e.eta + atol:
            bad.append(f"k={e.k}: f_next={e.f_next!r} > f + eta = {e.f + e.eta!r}")
        # the running slack sum is rounded differently from the iterates
        if not e.f <= (result.f0 + slack) * (1.0 + 1e-13) + atol:
            bad.append(f"k={e.k}: f={e.f!r} exceeds f0 + accumulated slack {result.f0 + slack!r}")
        if not e.f_next <= e.f_trial:
            bad.append(f"k={e.k}: f_next={e.f_next!r} > f_trial={e.f_trial!r}")
        if e.step_kind == "reduction" and e.alpha != 1.0:
            bad.append(f"k={e.k}: reduction step with alpha={e.alpha!r}")
        if not (0.0 < e.alpha <= 1.0 and math.frexp(e.alpha)[0] == 0.5):
            bad.append(f"k={e.k}: alpha={e.alpha!r} is not a power of 1/2")
        if pos + 1 < len(trace) and trace[pos + 1].f != e.f_next:
            bad.append(f"k={e.k}: next entry starts at f={trace[pos + 1].f!r}, expected {e.f_next!r}")
        slack += e.eta
    if trace and result.termination != "feval_budget" and trace[-1].f_next != result.f_best:
        bad.append("final iterate value differs from f_best")
    return bad
