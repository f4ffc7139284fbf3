"""Explicit Lax-Friedrichs-type stepping of the Saint-Venant equations.

Two interchangeable implementations of the trajectory kernel live here: a
scalar-loop version compiled by numba and a vectorized numpy version.  Both
return ``(A_traj, V_traj, status, fail_step, fail_j)`` where the trajectories
have shape ``(steps, n)`` and hold the state after each step.  ``status`` is
one of the ``OK``/``CFL``/``NONFINITE`` codes; on failure the trajectories
are only valid up to ``fail_step``.
"""
import math

import numpy as np

from ._backend import USE_NUMBA, njit

OK = 0
CFL = 1
NONFINITE = 2


@njit
def simulate_loops(A0, Q0, xi, q_in, b, slope, dx, dt, g, theta, a_floor):
    n = A0.shape[0]
    steps = q_in.shape[0]
    A_traj = np.empty((steps, n))
    V_traj = np.empty((steps, n))
    A = A0.copy()
    Q = Q0.copy()
    An = np.empty(n)
    Qn = np.empty(n)
    h = np.empty(n)
    V = np.empty(n)
    QV = np.empty(n)
    zhat = np.empty(n)
    c = dt / (2.0 * dx)
    half_theta = 0.5 * theta
    for s in range(steps):
        for j in range(n):
            h[j] = A[j] / b
            V[j] = Q[j] / A[j]
            QV[j] = Q[j] * V[j]
            if not (abs(V[j]) + math.sqrt(g * h[j])) * dt / dx < 1.0:
                return A_traj, V_traj, CFL, s, j
        for j in range(n):
            if j == 0:
                hx = (h[1] - h[0]) / dx
            elif j == n - 1:
                hx = (h[n - 1] - h[n - 2]) / dx
            else:
                hx = (h[j + 1] - h[j - 1]) / (2.0 * dx)
            zx = hx + slope
            zhat[j] = zx / (1.0 + zx * zx)
        for j in range(1, n - 1):
            a = A[j] - c * (Q[j + 1] - Q[j - 1]) + half_theta * (A[j + 1] - 2.0 * A[j] + A[j - 1])
            An[j] = max(a, a_floor)
            P = b + 2.0 * h[j]
            src = g * A[j] * zhat[j] + xi[j] * P * V[j] * abs(V[j]) / 8.0
            Qn[j] = (Q[j] - c * (QV[j + 1] - QV[j - 1])
                     + half_theta * (Q[j + 1] - 2.0 * Q[j] + Q[j - 1]) - dt * src)
        Qn[0] = q_in[s]
        An[0] = max(2.0 * An[1] - An[2], a_floor)
        An[n - 1] = max(2.0 * An[n - 2] - An[n - 3], a_floor)
        Qn[n - 1] = 2.0 * Qn[n - 2] - Qn[n - 3]
        for j in range(n):
            A[j] = An[j]
            Q[j] = Qn[j]
            if not (math.isfinite(A[j]) and math.isfinite(Q[j])):
                return A_traj, V_traj, NONFINITE, s, j
            A_traj[s, j] = A[j]
            V_traj[s, j] = Q[j] / A[j]
    return A_traj, V_traj, OK, steps, -1


def simulate_numpy(A0, Q0, xi, q_in, b, slope, dx, dt, g, theta, a_floor):
    n = A0.shape[0]
    steps = q_in.shape[0]
    A_traj = np.empty((steps, n))
    V_traj = np.empty((steps, n))
    A = A0.copy()
    Q = Q0.copy()
    c = dt / (2.0 * dx)
    half_theta = 0.5 * theta
    hx = np.empty(n)
    xi_in = xi[1:-1]
    for s in range(steps):
        h = A / b
        V = Q / A
        QV = Q * V
        ok = (np.abs(V) + np.sqrt(g * h)) * dt / dx < 1.0
        if not ok.all():
            return A_traj, V_traj, CFL, s, int(np.argmin(ok))
        hx[0] = (h[1] - h[0]) / dx
        hx[-1] = (h[-1] - h[-2]) / dx
        hx[1:-1] = (h[2:] - h[:-2]) / (2.0 * dx)
        zx = hx + slope
        zhat = zx / (1.0 + zx * zx)
        An = np.empty(n)
        Qn = np.empty(n)
        An[1:-1] = np.maximum(
            A[1:-1] - c * (Q[2:] - Q[:-2]) + half_theta * (A[2:] - 2.0 * A[1:-1] + A[:-2]),
            a_floor)
        Vi = V[1:-1]
        P = b + 2.0 * h[1:-1]
        src = g * A[1:-1] * zhat[1:-1] + xi_in * P * Vi * np.abs(Vi) / 8.0
        Qn[1:-1] = (Q[1:-1] - c * (QV[2:] - QV[:-2])
                    + half_theta * (Q[2:] - 2.0 * Q[1:-1] + Q[:-2]) - dt * src)
        Qn[0] = q_in[s]
        An[0] = max(2.0 * An[1] - An[2], a_floor)
        An[-1] = max(2.0 * An[-2] - An[-3], a_floor)
        Qn[-1] = 2.0 * Qn[-2] - Qn[-3]
        A, Q = An, Qn
        finite = np.isfinite(A) & np.isfinite(Q)
        if not finite.all():
            return A_traj, V_traj, NONFINITE, s, int(np.argmin(finite))
        A_traj[s] = A
        V_traj[s] = Q / A
    return A_traj, V_traj, OK, steps, -1


simulate_kernel = simulate_loops if USE_NUMBA else simulate_numpy
