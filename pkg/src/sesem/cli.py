"""Command-line interface: ``sesem generate | solve | experiment``.

Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 budget exhausted.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, sven
from ._backend import backend_name
from .core import RngStreams, SolverConfig

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_BUDGET = 0, 1, 2, 3
RUN_SCHEMA = "sesem.run/1"

log = logging.getLogger("sesem")


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _fraction(text):
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"fraction must lie in (0, 1], got {text}")
    return value


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _float_list(text):
    try:
        return tuple(float(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        return tuple(int(v) for v in text.split(",") if v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_channel_flags(p):
    p.add_argument("--nx", type=int, default=500, help="grid intervals (points 0..nx)")
    p.add_argument("--dx", type=_positive_float, default=6.0, help="grid spacing (m)")
    p.add_argument("--dt", type=_positive_float, default=0.1, help="time step (s)")


def _add_solver_flags(p, replicates=10):
    p.add_argument("--epsilon", type=_positive_float, default=1e-9,
                   help="relative stopping tolerance on the squared misfit")
    p.add_argument("--reduction", choices=("affine", "spline", "none"), default="spline")
    p.add_argument("--nred", type=int, default=None,
                   help="reduced dimension (default 20 for spline, 4 for affine)")
    p.add_argument("--memory", type=_positive_int, default=1000, help="secant memory p")
    p.add_argument("--accel", action=argparse.BooleanOptionalAction, default=True,
                   help="secant acceleration")
    p.add_argument("--replicates", type=_positive_int, default=replicates)
    p.add_argument("--seed", type=_nonneg_int, default=0, help="first solver seed")
    p.add_argument("--budget-fevals", type=_positive_int, default=200_000)
    p.add_argument("--max-iters", type=_nonneg_int, default=100_000)
    p.add_argument("--inner-budget", type=_nonneg_int, default=None,
                   help="evaluations per reduced subproblem")
    p.add_argument("--delta", type=_positive_float, default=10.0)
    p.add_argument("--workers", type=_positive_int, default=1,
                   help="parallel replicate slots (capped by SESEM_THREADS)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sesem", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sesem {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="create a synthetic observation set")
    _add_channel_flags(g)
    g.add_argument("--nt", type=_positive_int, default=10, help="observed time steps")
    g.add_argument("--fraction", type=_fraction, default=0.1)
    g.add_argument("--seed", type=_nonneg_int, default=1)
    g.add_argument("--out", type=Path, default=Path("."))
    g.add_argument("--trajectory", action="store_true", help="also export trajectory CSV")

    s = sub.add_parser("solve", help="estimate the Manning field from observations")
    s.add_argument("--obs", type=Path, default=None,
                   help="observation file (default: <out>/observations.txt)")
    _add_solver_flags(s)
    s.add_argument("--out", type=Path, default=Path("."))

    e = sub.add_parser("experiment", help="run one of the experiments nr1..nr4")
    e.add_argument("name")
    e.add_argument("--out", type=Path, default=Path("."))
    e.add_argument("--nx", type=int, default=None)
    e.add_argument("--nt", type=_positive_int, default=10)
    e.add_argument("--fraction", type=_fraction, default=0.1)
    e.add_argument("--epsilon", type=_positive_float, default=1e-9)
    e.add_argument("--replicates", type=_positive_int, default=3)
    e.add_argument("--seed", type=_nonneg_int, default=1, help="instance seed")
    e.add_argument("--solver-seed", type=_nonneg_int, default=0)
    e.add_argument("--budget-fevals", type=_positive_int, default=200_000)
    e.add_argument("--max-iters", type=_nonneg_int, default=5_000)
    e.add_argument("--workers", type=_positive_int, default=1)
    e.add_argument("--nu", type=_float_list, default=experiments.NR1_NU, help="nr1 nu grid")
    e.add_argument("--eps-grid", type=_float_list, default=experiments.NR1_EPS,
                   help="nr1 epsilon grid")
    e.add_argument("--t-pred", type=_positive_float, default=600.0, help="nr1 horizon (s)")
    e.add_argument("--reduction", choices=("affine", "spline"), default="spline",
                   help="nr1 reduction")
    e.add_argument("--affine-grid", type=_int_list, default=experiments.NR2_AFFINE)
    e.add_argument("--spline-grid", type=_int_list, default=experiments.NR2_SPLINE)
    e.add_argument("--max-nx", type=int, default=700, help="nr4 largest n_x")
    e.add_argument("--min-nx", type=int, default=500, help="nr4 smallest n_x")
    e.add_argument("--step-nx", type=_positive_int, default=100, help="nr4 n_x increment")
    return parser


# generate ----------------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.nx < 2:
        raise UsageError(f"--nx must be >= 2, got {args.nx}")
    spec = sven.ChannelSpec(n_x=args.nx, dx=args.dx, dt=args.dt)
    streams = RngStreams(args.seed)
    xi = sven.true_manning(spec, streams)
    traj = sven.simulate(xi, spec, args.nt)
    obs = sven.sample_observations(traj, args.fraction, streams, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    obs.write(args.out / "observations.txt")
    write_truth(args.out / "truth.txt", xi, spec)
    if args.trajectory:
        traj.to_csv(args.out / "trajectory.csv")
    print(json.dumps({"observations": str(args.out / "observations.txt"),
                      "truth": str(args.out / "truth.txt"), "n_o": obs.size,
                      "n_x": spec.n_x, "n_t": args.nt, "sum_sq": obs.sum_sq}))
    return EXIT_OK


def write_truth(path, xi, spec):
    header = f"sesem manning field v1\nn_x {spec.n_x}"
    np.savetxt(path, xi, fmt="%.17e", header=header)


def read_truth(path):
    return np.loadtxt(path, comments="#")


# solve -------------------------------------------------------------------------

def _solver_config(args, target) -> SolverConfig:
    n_red = args.nred
    if n_red is None:
        n_red = 4 if args.reduction == "affine" else 20
    try:
        return SolverConfig(ssq_target=target, reduction_kind=args.reduction, n_red=n_red,
                            memory_p=args.memory, accelerate=args.accel, seed=args.seed,
                            max_fevals=args.budget_fevals, max_outer_iters=args.max_iters,
                            subsolver_budget=args.inner_budget, delta=args.delta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_solve(args) -> int:
    obs_path = args.obs or args.out / "observations.txt"
    if not obs_path.exists():
        raise UsageError(f"observation file {obs_path} not found")
    obs = sven.ObservationSet.read(obs_path)
    spec = sven.ChannelSpec(n_x=obs.n_x, dx=obs.dx, dt=obs.dt, t_min=obs.t_min)
    target = sven.ssq_target(obs, args.epsilon)
    config = _solver_config(args, target)
    if config.reduction_kind == "affine" and config.n_red > spec.n_points:
        raise UsageError(f"--nred {config.n_red} exceeds the number of unknowns")

    started = _now()
    results = experiments.run_replicates(obs, spec, config, args.replicates, args.workers)
    finished = _now()

    args.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r, res in enumerate(results):
        seed = config.seed + r
        trace_path = args.out / f"trace_{config.reduction_kind}_{config.n_red}_seed{seed}.csv"
        experiments.write_csv(trace_path, experiments.trace_rows(res), experiments.TRACE_COLUMNS)
        rows.append({"replicate": r, "seed": seed, **res.summary(), "trace": str(trace_path)})
    config_echo = {k: v for k, v in vars(config).items()}
    config_echo["inner_budget"] = config.inner_budget
    record = {
        "schema": RUN_SCHEMA,
        "backend": backend_name(),
        "observations": str(obs_path),
        "instance": {"n_x": obs.n_x, "n_t": obs.n_t, "n_o": obs.size, "sum_sq": obs.sum_sq,
                     "epsilon": args.epsilon, "ssq_target": target},
        "config": config_echo,
        "replicates": rows,
        "aggregate": experiments.aggregate(results),
        "started": started,
        "finished": finished,
    }
    json.dump(record, sys.stdout, indent=2, default=_json_default)
    sys.stdout.write("\n")
    terms = {res.termination for res in results}
    if terms & {"feval_budget", "iter_budget"}:
        return EXIT_BUDGET
    if terms != {"target_reached"}:
        return EXIT_RUNTIME
    return EXIT_OK


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


# experiment --------------------------------------------------------------------

EXPERIMENTS = ("nr1", "nr2", "nr3", "nr4")


def cmd_experiment(args) -> int:
    if args.name not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    args.out.mkdir(parents=True, exist_ok=True)
    common = dict(seed=args.seed, solver_seed=args.solver_seed, max_fevals=args.budget_fevals)
    if args.name == "nr1":
        rows = experiments.experiment_nr1(
            n_x=args.nx or 100, t_pred=args.t_pred, nus=args.nu, epsilons=args.eps_grid,
            fraction=args.fraction, reduction=args.reduction,
            n_red=20 if args.reduction == "spline" else 4, **common)
        path = args.out / "nr1_acceptability.csv"
        experiments.write_csv(path, rows)
    elif args.name == "nr2":
        rows = experiments.experiment_nr2(
            n_x=args.nx or 500, n_t=args.nt, fraction=args.fraction, epsilon=args.epsilon,
            affine=args.affine_grid, spline=args.spline_grid, replicates=args.replicates,
            workers=args.workers, **common)
        path = args.out / "nr2_boxplots.csv"
        experiments.write_csv(path, rows)
    elif args.name == "nr3":
        summary, traces = experiments.experiment_nr3(
            n_x=args.nx or 500, n_t=args.nt, fraction=args.fraction, epsilon=args.epsilon,
            replicates=args.replicates, workers=args.workers,
            max_outer_iters=args.max_iters, **common)
        path = args.out / "nr3_summary.csv"
        experiments.write_csv(path, summary)
        experiments.write_csv(args.out / "nr3_traces.csv", traces)
        rows = summary
    else:
        if args.max_nx < args.min_nx:
            raise UsageError("--max-nx must not be smaller than --min-nx")
        rows = experiments.experiment_nr4(
            max_nx=args.max_nx, min_nx=args.min_nx, step_nx=args.step_nx, n_t=args.nt, fraction=args.fraction,
            epsilon=args.epsilon, replicates=args.replicates, workers=args.workers, **common)
        path = args.out / "nr4_sizes.csv"
        experiments.write_csv(path, rows)
    print(json.dumps({"experiment": args.name, "table": str(path), "rows": len(rows)}))
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "experiment": cmd_experiment}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sesem {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (sven.SimulationError, OSError, ValueError) as exc:
        print(f"sesem {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
