"""Replicate runner and the four experiment drivers (nr1..nr4).

Every driver returns a list of flat dict rows suitable for CSV output; the
defaults are desk-scale and every grid can be widened through arguments.
"""
from __future__ import annotations

import csv
import os
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import sven
from .core import RngStreams, SolveResult, SolverConfig
from .framework import solve

TRACE_COLUMNS = ("k", "f", "ssq", "alpha", "step_kind", "accel_used", "fevals_cum")


def worker_slots(requested: int = 1) -> int:
    cap = os.environ.get("SESEM_THREADS")
    slots = max(1, int(requested))
    if cap:
        slots = min(slots, max(1, int(cap)))
    return slots


def run_replicates(obs: sven.ObservationSet, spec: sven.ChannelSpec, config: SolverConfig,
                   replicates: int = 10, workers: int = 1) -> list[SolveResult]:
    """Solve the same instance with seeds config.seed + 0 .. replicates-1.

    Each replicate builds its own problem, so replicates can run in parallel.
    """

    def one(r):
        problem = sven.make_problem(obs, spec)
        return solve(problem, replace(config, seed=config.seed + r))

    slots = worker_slots(workers)
    if slots == 1:
        return [one(r) for r in range(replicates)]
    with ThreadPoolExecutor(max_workers=slots) as pool:
        return list(pool.map(one, range(replicates)))


def _stats(values):
    values = [float(v) for v in values]
    mean = statistics.fmean(values) if values else float("nan")
    stdev = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, stdev


def aggregate(results: list[SolveResult]) -> dict:
    out = {"replicates": len(results),
           "successes": sum(r.success for r in results)}
    for key, get in (("time", lambda r: r.elapsed), ("iters", lambda r: r.outer_iters),
                     ("fevals", lambda r: r.fevals), ("ssq", lambda r: r.ssq_best)):
        mean, stdev = _stats([get(r) for r in results])
        out[f"{key}_mean"] = mean
        out[f"{key}_stdev"] = stdev
    return out


def trace_rows(result: SolveResult):
    for e in result.trace:
        yield {"k": e.k, "f": e.f, "ssq": e.ssq, "alpha": e.alpha, "step_kind": e.step_kind,
               "accel_used": int(e.accel_used), "fevals_cum": e.fevals_cum}


def write_csv(path, rows, columns=None):
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _fmt(row[c]) for c in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def base_config(reduction: str, n_red: int, **kw) -> SolverConfig:
    return SolverConfig(reduction_kind=reduction, n_red=n_red, **kw)


# nr1 -------------------------------------------------------------------------

NR1_NU = (1 / 6000, 2 / 6000, 20 / 6000, 50 / 6000)
NR1_EPS = (1e-5, 1e-7, 1e-9, 1e-11)


def experiment_nr1(n_x=100, t_pred=600.0, nus=NR1_NU, epsilons=NR1_EPS, fraction=0.1,
                   future_fraction=0.1, reduction="spline", n_red=20, seed=1, solver_seed=0,
                   max_fevals=200_000, **cfg):
    """Acceptability of the fitted field over a (nu, epsilon) grid.

    nu sets the observed horizon t_obs ~ nu * t_pred; future observations are
    drawn from (t_obs, t_pred] and scored with the relative prediction error.
    """
    spec = sven.ChannelSpec(n_x=n_x)
    streams = RngStreams(seed)
    xi = sven.true_manning(spec, streams)
    n_pred = int(round(t_pred / spec.dt))
    traj = sven.simulate(xi, spec, n_pred)
    rows = []
    for nu in nus:
        n_t = max(1, int(round(nu * t_pred / spec.dt)))
        if n_t >= n_pred:
            raise ValueError(f"nu={nu} leaves no prediction window")
        obs = sven.sample_observations(traj, fraction, streams, last=n_t, seed=seed)
        future = sven.sample_observations(traj, future_fraction, streams, first=n_t + 1,
                                          seed=seed)
        for eps in epsilons:
            config = base_config(reduction, n_red, ssq_target=sven.ssq_target(obs, eps),
                                 seed=solver_seed, max_fevals=max_fevals, **cfg)
            res = solve(sven.make_problem(obs, spec), config)
            eta_val = sven.prediction_error(res.x_best, obs, future, spec)
            rows.append({"nu": nu, "n_t": n_t, "n_o": obs.size, "n_x": n_x, "epsilon": eps,
                         "ssq": res.ssq_best, "iters": res.outer_iters, "fevals": res.fevals,
                         "termination": res.termination, "eta": eta_val,
                         "acceptable": int(sven.is_acceptable(eta_val))})
    return rows


# nr2 -------------------------------------------------------------------------

NR2_AFFINE = (4, 5, 6, 8)
NR2_SPLINE = (8, 12, 20, 30)


def _instance(n_x, n_t, fraction, seed):
    inst = sven.make_instance(n_x, n_t, fraction, seed=seed)
    return inst.obs, inst.spec


def experiment_nr2(n_x=500, n_t=10, fraction=0.1, epsilon=1e-9, affine=NR2_AFFINE,
                   spline=NR2_SPLINE, replicates=3, seed=1, solver_seed=0, workers=1,
                   max_fevals=200_000, **cfg):
    """Boxplot source data: one row per (reduction, n_red, replicate)."""
    obs, spec = _instance(n_x, n_t, fraction, seed)
    target = sven.ssq_target(obs, epsilon)
    rows = []
    for reduction, grid in (("affine", affine), ("spline", spline)):
        for n_red in grid:
            config = base_config(reduction, n_red, ssq_target=target, seed=solver_seed,
                                 max_fevals=max_fevals, **cfg)
            for r, res in enumerate(run_replicates(obs, spec, config, replicates, workers)):
                rows.append({"reduction": reduction, "n_red": n_red, "replicate": r,
                             "iters": res.outer_iters, "fevals": res.fevals,
                             "time": res.elapsed, "ssq": res.ssq_best,
                             "termination": res.termination})
    return rows


# nr3 -------------------------------------------------------------------------

def experiment_nr3(n_x=500, n_t=10, fraction=0.1, epsilon=1e-9, variants=(("affine", 4), ("spline", 20)),
                   replicates=3, seed=1, solver_seed=0, workers=1, max_fevals=100_000,
                   max_outer_iters=5_000, **cfg):
    """Acceleration ablation; returns (summary rows, trace rows)."""
    obs, spec = _instance(n_x, n_t, fraction, seed)
    target = sven.ssq_target(obs, epsilon)
    summary, traces = [], []
    for reduction, n_red in variants:
        for accel in (True, False):
            config = base_config(reduction, n_red, ssq_target=target, seed=solver_seed,
                                 accelerate=accel, max_fevals=max_fevals,
                                 max_outer_iters=max_outer_iters, **cfg)
            for r, res in enumerate(run_replicates(obs, spec, config, replicates, workers)):
                summary.append({"reduction": reduction, "n_red": n_red, "accel": int(accel),
                                "replicate": r, "iters": res.outer_iters,
                                "fevals": res.fevals, "time": res.elapsed,
                                "ssq": res.ssq_best, "termination": res.termination,
                                "accel_accepts": res.accel_accepts,
                                "accel_rejects": res.accel_rejects})
                for row in trace_rows(res):
                    traces.append({"reduction": reduction, "n_red": n_red,
                                   "accel": int(accel), "replicate": r, **row})
    return summary, traces


# nr4 -------------------------------------------------------------------------

def experiment_nr4(max_nx=700, min_nx=500, step_nx=100, n_t=10, fraction=0.1, epsilon=1e-9,
                   variants=(("affine", 4), ("spline", 20)), replicates=3, seed=1,
                   solver_seed=0, workers=1, max_fevals=200_000, **cfg):
    """Size sweep; one row per (n_x, reduction) with replicate averages."""
    rows = []
    for n_x in range(min_nx, max_nx + 1, step_nx):
        obs, spec = _instance(n_x, n_t, fraction, seed)
        target = sven.ssq_target(obs, epsilon)
        for reduction, n_red in variants:
            config = base_config(reduction, n_red, ssq_target=target, seed=solver_seed,
                                 max_fevals=max_fevals, **cfg)
            results = run_replicates(obs, spec, config, replicates, workers)
            agg = aggregate(results)
            rows.append({"n_x": n_x, "n_o": obs.size, "reduction": reduction, "n_red": n_red,
                         "ssq_target": target, "ssq": agg["ssq_mean"],
                         "iters": agg["iters_mean"], "fevals": agg["fevals_mean"],
                         "time_avg": agg["time_mean"], "time_stdev": agg["time_stdev"],
                         "successes": agg["successes"], "replicates": replicates})
    return rows


def median(values):
    return float(np.median(np.asarray(values, dtype=np.float64)))
