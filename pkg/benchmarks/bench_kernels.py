"""Compare the numba and numpy Saint-Venant kernels.

Times one residual-evaluation-sized simulation (n_t steps on n_x+1 points)
with each backend and checks that both produce the same trajectory.

    python benchmarks/bench_kernels.py --nx 500 --nt 10 --repeat 200
"""
import argparse
import timeit

import numpy as np

from sesem import _kernels, sven
from sesem._backend import HAVE_NUMBA


def kernel_args(n_x, n_t, seed):
    spec = sven.ChannelSpec(n_x=n_x)
    xi = sven.true_manning(spec, np.random.default_rng(seed))
    s0 = sven.initial_state(spec)
    return (s0.A, s0.Q, xi, sven.inflow_series(spec, n_t), spec.width, spec.bed_slope,
            spec.dx, spec.dt, spec.g, spec.theta, spec.a_floor)


def bench(fn, args, repeat):
    fn(*args)  # compile / warm caches
    times = timeit.repeat(lambda: fn(*args), number=1, repeat=repeat)
    return float(np.median(times)), float(np.min(times))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nx", type=int, default=500)
    parser.add_argument("--nt", type=int, default=10)
    parser.add_argument("--repeat", type=int, default=200)
    parser.add_argument("--seed", type=int, default=1)
    args = parser.parse_args(argv)

    kargs = kernel_args(args.nx, args.nt, args.seed)
    rows = [("numpy", _kernels.simulate_numpy)]
    if HAVE_NUMBA:
        rows.append(("numba", _kernels.simulate_loops))
    else:
        print("numba is not installed; the loop kernel runs as plain Python")
        rows.append(("python loops", _kernels.simulate_loops))

    ref = _kernels.simulate_numpy(*kargs)
    results = {}
    for name, fn in rows:
        out = fn(*kargs)
        diff = max(np.max(np.abs(out[0] - ref[0])), np.max(np.abs(out[1] - ref[1])))
        med, best = bench(fn, kargs, args.repeat)
        results[name] = med
        print(f"{name:>12}: median {med * 1e6:9.1f} us  best {best * 1e6:9.1f} us  "
              f"max |diff| vs numpy {diff:.1e}")
    if len(results) == 2:
        (a, ta), (b, tb) = results.items()
        print(f"speedup {b} over {a}: {ta / tb:.1f}x  (n_x={args.nx}, n_t={args.nt})")


if __name__ == "__main__":
    main()
