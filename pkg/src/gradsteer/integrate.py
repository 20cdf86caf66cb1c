"""Fixed-step classical Runge-Kutta integration of forward state ODEs and
backward (terminal-value) costate ODEs on a shared uniform grid.

Forward trajectories store the vector field at every node so that interior
states can be recovered by cubic Hermite interpolation, which is what the
backward sweeps use at their half-step stage times.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Array, CostateTrajectory, TerminalKind, TimeGrid, Trajectory

VectorField = Callable[[float, Array], Array]


class DivergenceError(RuntimeError):
    """A state or costate stopped being finite during integration."""

    def __init__(self, t: float, step: int, what: str = "state"):
        self.t = t
        self.step = step
        super().__init__(f"non-finite {what} at t={t:.6g} (step {step})")


def integrate_forward(field: VectorField, y0, grid: TimeGrid) -> Trajectory:
    """RK4 from t=0 to t=T; node j of the result holds the state at t_j."""
    y = np.array(y0, dtype=float)
    n, dt = grid.steps, grid.dt
    nodes = grid.nodes
    states = np.empty((n + 1, y.shape[0]))
    derivs = np.empty_like(states)
    states[0] = y
    half = 0.5 * dt
    sixth = dt / 6.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(n):
            t = nodes[j]
            tm = 0.5 * (nodes[j] + nodes[j + 1])
            k1 = field(t, y)
            k2 = field(tm, y + half * k1)
            k3 = field(tm, y + half * k2)
            k4 = field(nodes[j + 1], y + dt * k3)
            derivs[j] = k1
            y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.all(np.isfinite(y)):
                raise DivergenceError(nodes[j + 1], j + 1)
            states[j + 1] = y
        derivs[n] = field(nodes[n], y)
    return Trajectory(grid=grid, states=states, derivs=derivs)


def integrate_backward(field: VectorField, p_T, grid: TimeGrid,
                       terminal_kind: TerminalKind = TerminalKind.FOLLOWER_ZERO,
                       ) -> CostateTrajectory:
    """RK4 from t=T down to t=0; the node at T holds p_T exactly."""
    p = np.array(p_T, dtype=float)
    n, dt = grid.steps, grid.dt
    nodes = grid.nodes
    costates = np.empty((n + 1, p.shape[0]))
    costates[n] = p
    h = -dt
    half = 0.5 * h
    sixth = h / 6.0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(n, 0, -1):
            t = nodes[j]
            tm = 0.5 * (nodes[j - 1] + nodes[j])
            k1 = field(t, p)
            k2 = field(tm, p + half * k1)
            k3 = field(tm, p + half * k2)
            k4 = field(nodes[j - 1], p + h * k3)
            p = p + sixth * (k1 + 2.0 * (k2 + k3) + k4)
            if not np.all(np.isfinite(p)):
                raise DivergenceError(nodes[j - 1], j - 1, what="costate")
            costates[j - 1] = p
    return CostateTrajectory(grid=grid, costates=costates, terminal_kind=terminal_kind)


def interpolate_state(traj: Trajectory, t: float) -> Array:
    """Cubic Hermite interpolation; at a grid node the stored value is
    returned unchanged."""
    if traj.derivs is None:
        raise ValueError("trajectory lacks stored field values; "
                         "produce it with integrate_forward")
    t = float(t)
    grid = traj.grid
    if t < -1e-12 or t > grid.horizon + 1e-12:
        raise ValueError(f"t={t} outside [0, {grid.horizon}]")
    nodes = grid.nodes
    n = grid.steps
    j = int(t / grid.dt)
    j = min(max(j, 0), n - 1)
    if t < nodes[j] and j > 0:
        j -= 1
    elif t >= nodes[j + 1] and j + 1 < n:
        j += 1
    if t == nodes[j]:
        return traj.states[j].copy()
    if t == nodes[j + 1]:
        return traj.states[j + 1].copy()
    dt = nodes[j + 1] - nodes[j]
    s = (t - nodes[j]) / dt
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    return (h00 * traj.states[j] + (h10 * dt) * traj.derivs[j]
            + h01 * traj.states[j + 1] + (h11 * dt) * traj.derivs[j + 1])


def midpoint_states(traj: Trajectory) -> Array:
    """All interval-midpoint states at once, by the same Hermite rule as
    interpolate_state evaluated at s = 1/2."""
    if traj.derivs is None:
        raise ValueError("trajectory lacks stored field values")
    dt = traj.grid.dt
    st, dv = traj.states, traj.derivs
    return 0.5 * (st[:-1] + st[1:]) + (dt / 8.0) * (dv[:-1] - dv[1:])
