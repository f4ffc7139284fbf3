"""Saint-Venant channel model and the Manning-coefficient estimation problem.

The channel is rectangular; the state is the wetted area ``A`` and flow rate
``Q`` on the grid ``x_j = x_min + j*dx``, ``j = 0..n_x``.  Synthetic truth is
generated with the same discretization that is later inverted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import ResidualProblem, RngStreams

Q_BASE = 8.245
Q_PEAK = 200.0
T_PEAK = 1200.0
T_RECOVER = 3600.0
DEPTH0 = 1.2
XI_BASE = 0.0366
XI_SPREAD = 0.01
PENALTY = 1e6


class SimulationError(RuntimeError):
    def __init__(self, message, step=None, j=None, t=None):
        super().__init__(message)
        self.step = step
        self.j = j
        self.t = t


@dataclass(frozen=True)
class ChannelSpec:
    n_x: int = 500
    width: float = 5.0
    bed_slope: float = 0.001
    x_min: float = 0.0
    dx: float = 6.0
    g: float = 9.8
    theta: float = 0.9
    dt: float = 0.1
    t_min: float = 0.0
    a_floor: float = 1e-6

    def __post_init__(self):
        if self.n_x < 2:
            raise ValueError(f"n_x must be >= 2, got {self.n_x}")
        if not (self.width > 0 and self.dx > 0 and self.dt > 0):
            raise ValueError("width, dx and dt must be positive")
        if not 0.0 < self.theta <= 1.0:
            raise ValueError(f"theta must lie in (0, 1], got {self.theta}")

    @property
    def n_points(self) -> int:
        return self.n_x + 1

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    def time(self, i) -> float:
        return self.t_min + i * self.dt


@dataclass
class FlowState:
    A: np.ndarray
    Q: np.ndarray
    width: float

    @property
    def h(self):
        return self.A / self.width

    @property
    def V(self):
        return self.Q / self.A

    @property
    def P(self):
        return self.width + 2.0 * self.h


def inflow(t: float) -> float:
    """Prescribed upstream flow rate (m^3/s): ramp up, ramp down, then base."""
    if t < 0:
        raise ValueError("time must be non-negative")
    if t <= T_PEAK:
        return Q_BASE + (Q_PEAK - Q_BASE) * t / T_PEAK
    if t <= T_RECOVER:
        return Q_PEAK - (Q_PEAK - Q_BASE) * (t - T_PEAK) / (T_RECOVER - T_PEAK)
    return Q_BASE


def inflow_series(spec: ChannelSpec, steps: int, start: int = 0) -> np.ndarray:
    """Boundary flow for the states at time indices start+1 .. start+steps."""
    return np.array([inflow(spec.time(i)) for i in range(start + 1, start + steps + 1)])


def initial_state(spec: ChannelSpec) -> FlowState:
    A = np.full(spec.n_points, DEPTH0 * spec.width)
    Q = np.full(spec.n_points, inflow(spec.t_min))
    return FlowState(A, Q, spec.width)


def zhat(h, spec: ChannelSpec) -> np.ndarray:
    """Slope term z_x / (1 + z_x^2) with z_x = h_x + bed slope."""
    h = np.asarray(h, dtype=np.float64)
    if h.size < 3:
        raise ValueError("need at least 3 grid points")
    hx = np.empty_like(h)
    hx[0] = (h[1] - h[0]) / spec.dx
    hx[-1] = (h[-1] - h[-2]) / spec.dx
    hx[1:-1] = (h[2:] - h[:-2]) / (2.0 * spec.dx)
    zx = hx + spec.bed_slope
    return zx / (1.0 + zx * zx)


def cfl_number(state: FlowState, spec: ChannelSpec) -> float:
    return float(np.max((np.abs(state.V) + np.sqrt(spec.g * state.h)) * spec.dt / spec.dx))


def _run(state, xi, spec, q_in):
    xi = np.ascontiguousarray(xi, dtype=np.float64)
    if xi.shape != (spec.n_points,):
        raise ValueError(f"Manning field must have {spec.n_points} entries, got {xi.shape}")
    return _kernels.simulate_kernel(
        np.ascontiguousarray(state.A, dtype=np.float64),
        np.ascontiguousarray(state.Q, dtype=np.float64),
        xi, np.ascontiguousarray(q_in, dtype=np.float64),
        float(spec.width), float(spec.bed_slope), float(spec.dx), float(spec.dt),
        float(spec.g), float(spec.theta), float(spec.a_floor))


def _raise_failure(status, s, j, spec, start=0):
    t = spec.time(start + s)
    reason = "CFL condition violated" if status == _kernels.CFL else "non-finite state"
    raise SimulationError(f"{reason} at t={t:g} s, grid point j={j}", step=start + s, j=j, t=t)


def step(state: FlowState, xi, spec: ChannelSpec, t: float, q_in: float | None = None) -> FlowState:
    """Advance ``state`` from ``t`` to ``t + dt``.

    The upstream flow is ``inflow(t + dt)`` unless ``q_in`` overrides it.
    """
    if q_in is None:
        q_in = inflow(t + spec.dt)
    A, V, status, s, j = _run(state, xi, spec, np.array([q_in], dtype=np.float64))
    if status != _kernels.OK:
        raise SimulationError(
            f"{'CFL condition violated' if status == _kernels.CFL else 'non-finite state'}"
            f" at t={t:g} s, grid point j={j}", step=0, j=j, t=t)
    return FlowState(A[0].copy(), A[0] * V[0], spec.width)


@dataclass
class Trajectory:
    """States after steps 1..n_t (the initial state is not stored)."""

    A: np.ndarray
    V: np.ndarray
    spec: ChannelSpec

    @property
    def n_t(self) -> int:
        return self.A.shape[0]

    def to_csv(self, path):
        spec = self.spec
        t = spec.time(np.arange(1, self.n_t + 1))
        tt, xx = np.meshgrid(t, spec.x, indexing="ij")
        data = np.column_stack([tt.ravel(), xx.ravel(), self.A.ravel(), self.V.ravel()])
        np.savetxt(path, data, delimiter=",", header="t,x,A,V", comments="", fmt="%.17g")


def simulate(xi, spec: ChannelSpec, steps: int, state: FlowState | None = None) -> Trajectory:
    """Run ``steps`` time steps from the initial state and record (A, V)."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if state is None:
        state = initial_state(spec)
    if steps == 0:
        empty = np.empty((0, spec.n_points))
        return Trajectory(empty, empty.copy(), spec)
    A, V, status, s, j = _run(state, xi, spec, inflow_series(spec, steps))
    if status != _kernels.OK:
        _raise_failure(status, s, j, spec)
    return Trajectory(A, V, spec)


def true_manning(spec: ChannelSpec, rng: np.random.Generator | RngStreams) -> np.ndarray:
    """Base coefficient plus a uniform relative perturbation of up to 1%."""
    if isinstance(rng, RngStreams):
        rng = rng["manning_perturb"]
    u = rng.random(spec.n_points)
    return XI_BASE * (1.0 + u * XI_SPREAD)


@dataclass
class ObservationSet:
    """Masked observations y_ijk with i the time index, j the grid point and
    k = 1 (area) or 2 (velocity); entries are kept in lexicographic (i, j, k)
    order, which is also the residual order."""

    i: np.ndarray
    j: np.ndarray
    k: np.ndarray
    value: np.ndarray
    n_t: int
    n_x: int
    dt: float = 0.1
    dx: float = 6.0
    t_min: float = 0.0
    seed: int = 0
    sum_sq: float = field(init=False)

    def __post_init__(self):
        self.i = np.asarray(self.i, dtype=np.int64)
        self.j = np.asarray(self.j, dtype=np.int64)
        self.k = np.asarray(self.k, dtype=np.int64)
        self.value = np.asarray(self.value, dtype=np.float64)
        if not (self.i.shape == self.j.shape == self.k.shape == self.value.shape):
            raise ValueError("observation arrays must have equal length")
        order = np.lexsort((self.k, self.j, self.i))
        self.i, self.j, self.k, self.value = (a[order] for a in (self.i, self.j, self.k, self.value))
        if self.size:
            if self.i.min() < 1 or self.i.max() > self.n_t:
                raise ValueError("time indices must lie in [1, n_t]")
            if self.j.min() < 0 or self.j.max() > self.n_x:
                raise ValueError("space indices must lie in [0, n_x]")
            if not np.isin(self.k, (1, 2)).all():
                raise ValueError("k must be 1 (area) or 2 (velocity)")
            key = (self.i * (self.n_x + 1) + self.j) * 2 + (self.k - 1)
            if np.any(np.diff(key) == 0):
                raise ValueError("duplicate observation index")
        self.sum_sq = float(self.value @ self.value)

    @property
    def size(self) -> int:
        return int(self.value.size)

    n_o = size

    def predict(self, traj: Trajectory) -> np.ndarray:
        """Model values at the observed indices, in entry order."""
        rows = self.i - 1
        return np.where(self.k == 1, traj.A[rows, self.j], traj.V[rows, self.j])

    def merged(self, other: "ObservationSet") -> "ObservationSet":
        return ObservationSet(
            np.concatenate([self.i, other.i]), np.concatenate([self.j, other.j]),
            np.concatenate([self.k, other.k]), np.concatenate([self.value, other.value]),
            n_t=max(self.n_t, other.n_t), n_x=self.n_x, dt=self.dt, dx=self.dx,
            t_min=self.t_min, seed=self.seed)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(f"# sesem observations v1\n")
            fh.write(f"n_x {self.n_x}\nn_t {self.n_t}\ndt {self.dt!r}\ndx {self.dx!r}\n"
                     f"t_min {self.t_min!r}\nseed {self.seed}\nn_o {self.size}\n")
            for i, j, k, v in zip(self.i, self.j, self.k, self.value):
                fh.write(f"{i} {j} {k} {v:.17e}\n")

    @classmethod
    def read(cls, path) -> "ObservationSet":
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split()
                if len(parts) == 2:
                    header[parts[0]] = parts[1]
                elif len(parts) == 4:
                    rows.append(parts)
                else:
                    raise ValueError(f"malformed observation line: {line!r}")
        missing = {"n_x", "n_t", "dt", "dx", "seed"} - header.keys()
        if missing:
            raise ValueError(f"observation header lacks {sorted(missing)}")
        if not rows:
            raise ValueError("observation file has no entries")
        arr = np.array(rows, dtype=object)
        obs = cls(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64),
                  arr[:, 2].astype(np.int64), arr[:, 3].astype(np.float64),
                  n_t=int(header["n_t"]), n_x=int(header["n_x"]), dt=float(header["dt"]),
                  dx=float(header["dx"]), t_min=float(header.get("t_min", 0.0)),
                  seed=int(header["seed"]))
        if "n_o" in header and int(header["n_o"]) != obs.size:
            raise ValueError(f"header announces {header['n_o']} entries, found {obs.size}")
        return obs


def sample_observations(traj: Trajectory, fraction: float, rng, first: int = 1,
                        last: int | None = None, seed: int = 0) -> ObservationSet:
    """Keep each (i, j, k) with probability ``fraction`` for time indices
    ``first..last`` (default: the whole trajectory)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if isinstance(rng, RngStreams):
        rng = rng["obs_mask"]
    last = traj.n_t if last is None else last
    if not 1 <= first <= last <= traj.n_t:
        raise ValueError(f"invalid time window [{first}, {last}] for {traj.n_t} steps")
    n_pts = traj.spec.n_points
    ii, jj, kk = np.meshgrid(np.arange(first, last + 1), np.arange(n_pts), np.array([1, 2]),
                             indexing="ij")
    ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
    if fraction < 1.0:
        keep = rng.random(ii.size) < fraction
        ii, jj, kk = ii[keep], jj[keep], kk[keep]
    if ii.size == 0:
        raise ValueError("observation mask selected no entries")
    values = np.where(kk == 1, traj.A[ii - 1, jj], traj.V[ii - 1, jj])
    spec = traj.spec
    return ObservationSet(ii, jj, kk, values, n_t=last, n_x=spec.n_x, dt=spec.dt, dx=spec.dx,
                          t_min=spec.t_min, seed=seed)


def make_problem(obs: ObservationSet, spec: ChannelSpec, max_evals: int | None = None) -> ResidualProblem:
    """Residuals y(xi, t_i, x_j, k) - y_obs over the observed set.

    A failed simulation yields a constant residual of magnitude ``PENALTY`` so
    that any descent test rejects the point.
    """
    if obs.size == 0:
        raise ValueError("empty observation set")
    if obs.n_x != spec.n_x:
        raise ValueError(f"observations are for n_x={obs.n_x}, channel has n_x={spec.n_x}")
    state0 = initial_state(spec)
    q_in = inflow_series(spec, obs.n_t)
    rows = obs.i - 1
    cols = obs.j
    is_area = obs.k == 1
    values = obs.value
    penalty = np.full(obs.size, PENALTY)

    def residual(xi):
        A, V, status, _, _ = _run(state0, xi, spec, q_in)
        if status != _kernels.OK:
            return penalty.copy()
        pred = np.where(is_area, A[rows, cols], V[rows, cols])
        return pred - values

    return ResidualProblem(residual, spec.n_points, obs.size, max_evals=max_evals,
                           name=f"saint-venant n_x={spec.n_x} n_o={obs.size}")


def ssq_target(obs: ObservationSet, epsilon: float) -> float:
    """Stopping level epsilon * sum of squared observations (‖F‖² scale)."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    return epsilon * obs.sum_sq


def prediction_error(xi_bar, obs_train: ObservationSet, obs_future: ObservationSet,
                     spec: ChannelSpec) -> float:
    """Relative misfit over observed plus future data; +inf if the run fails."""
    union = obs_train.merged(obs_future)
    try:
        traj = simulate(xi_bar, spec, union.n_t)
    except SimulationError:
        return math.inf
    r = union.predict(traj) - union.value
    return float(r @ r) / union.sum_sq


ACCEPTABLE_ETA = 1e-4


def is_acceptable(eta_value: float) -> bool:
    return eta_value <= ACCEPTABLE_ETA


@dataclass
class Instance:
    """A synthetic estimation instance: channel, truth and observations."""

    spec: ChannelSpec
    xi_true: np.ndarray
    obs: ObservationSet
    trajectory: Trajectory


def make_instance(n_x: int = 500, n_t: int = 10, fraction: float = 0.1, seed: int = 1,
                  **spec_kw) -> Instance:
    spec = ChannelSpec(n_x=n_x, **spec_kw)
    streams = RngStreams(seed)
    xi = true_manning(spec, streams)
    traj = simulate(xi, spec, n_t)
    obs = sample_observations(traj, fraction, streams, seed=seed)
    return Instance(spec, xi, obs, traj)
