"""Hamiltonians, costate dynamics, and adjoint-based gradients of the two
control functionals.

Conventions (fixed by the finite-difference exactness tests):

* Hamiltonian = running cost + <costate, state velocity>.
* Costate dynamics: pdot = -dH/dtheta, integrated backward from t = T.
* With the follower's zero terminal costate, the functional gradient of the
  regularization cost w.r.t. its control is dH2/du2 = (beta*u2 + p2) on
  follower coordinates.
* With the penalty terminal costate p1(T) = mu*(Phi(theta(T)) - z)*dPhi,
  dH1/du1 = p1 on leader coordinates is the exact frozen-follower gradient
  of  J1 + (mu/2)*(Phi - z)^2.  The fixed-terminal mode instead uses
  p1(T) = -dPhi, which differentiates the Lagrangian J1 - (Phi - z).
* Descent steps are u <- u - gamma * dH/du.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .core import (Array, BasisControl, ControlPartition, ControlSignal, Dataset,
                   GridControl, SolverConfig, TerminalKind, TerminalMode, TimeGrid,
                   Trajectory, CostateTrajectory, eval_control_many,
                   _frozen_array)
from .integrate import integrate_backward, integrate_forward, midpoint_states
from .models import (Objective, gradient_function, hvp_function, validation_phi,
                     validation_phi_grad, value_function)


@dataclass(frozen=True)
class FollowerProblem:
    """Regularization-side problem: respond optimally to a fixed leader control."""

    objective: Objective
    alpha: float
    beta: float
    partition: ControlPartition
    u1: ControlSignal
    grid: TimeGrid
    theta0: Array

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        object.__setattr__(self, "theta0", _frozen_array(self.theta0, "theta0"))


@dataclass(frozen=True)
class LeaderProblem:
    """Steering-side problem: drive the terminal validation value to z with
    the follower response held fixed.

    state_weight scales the running cost and exists so tests can switch that
    term off; production paths leave it at 1.
    """

    objective: Objective
    validation: Dataset
    z: float
    mu: float
    partition: ControlPartition
    u2: ControlSignal
    grid: TimeGrid
    theta0: Array
    terminal_mode: TerminalMode = TerminalMode.PENALTY
    state_weight: float = 1.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        object.__setattr__(self, "theta0", _frozen_array(self.theta0, "theta0"))


@dataclass(frozen=True)
class ControlGradient:
    """Gradient in the shape of a control: pointwise values on grid nodes,
    plus basis coefficients when the control is basis-represented."""

    pointwise: Array
    coefficients: Optional[Array] = None

    @property
    def norm_inf(self) -> float:
        return float(np.abs(self.pointwise).max())

    @property
    def update_norm(self) -> float:
        """Magnitude of the step the gradient actually drives: coefficient
        norm for basis controls (the pointwise residual cannot drop below the
        representation error there), pointwise norm for grid controls."""
        if self.coefficients is not None:
            return float(np.abs(self.coefficients).max())
        return self.norm_inf


# ---------------------------------------------------------------------------
# control sampling and quadrature

from functools import lru_cache


@lru_cache(maxsize=64)
def _cached_basis_matrix(horizon: float, steps: int, n_functions: int,
                         basis: str, stages: bool) -> Array:
    grid = TimeGrid(horizon, steps)
    times = grid.stage_times if stages else grid.nodes
    x = 2.0 * times / horizon - 1.0
    out = np.polynomial.legendre.legvander(x, n_functions - 1)
    out.flags.writeable = False
    return out


def node_basis_matrix(grid: TimeGrid, n_functions: int, basis: str) -> Array:
    return _cached_basis_matrix(grid.horizon, grid.steps, n_functions, basis,
                                False)


def control_node_values(u: ControlSignal, grid: TimeGrid) -> Array:
    if isinstance(u, GridControl) and u.grid == grid:
        return np.clip(u.values, -u.u_max, u.u_max)
    if isinstance(u, BasisControl) and u.grid == grid:
        vals = node_basis_matrix(grid, u.n_functions, u.basis) @ u.coefficients
        return np.clip(vals, -u.u_max, u.u_max)
    return eval_control_many(u, grid.nodes)


def stage_control_values(u: ControlSignal, grid: TimeGrid) -> Array:
    """Control at nodes and interval midpoints, shape (2*steps + 1, p)."""
    if isinstance(u, GridControl) and u.grid == grid:
        out = np.empty((2 * grid.steps + 1, u.dimension))
        out[0::2] = u.values
        out[1::2] = 0.5 * (u.values[:-1] + u.values[1:])
        return np.clip(out, -u.u_max, u.u_max)
    if isinstance(u, BasisControl) and u.grid == grid:
        mat = _cached_basis_matrix(grid.horizon, grid.steps, u.n_functions,
                                   u.basis, True)
        return np.clip(mat @ u.coefficients, -u.u_max, u.u_max)
    return eval_control_many(u, grid.stage_times)


def combined_stage_controls(u1: ControlSignal, u2: ControlSignal,
                            partition: ControlPartition, grid: TimeGrid) -> Array:
    return (stage_control_values(u1, grid) * partition.leader_mask
            + stage_control_values(u2, grid) * partition.follower_mask)


def trapezoid_weights(grid: TimeGrid) -> Array:
    w = np.full(grid.steps + 1, grid.dt)
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def grid_inner_product(grid: TimeGrid, a: Array, b: Array) -> float:
    """Trapezoid-weighted L2 pairing of two node-sampled signals."""
    return float(trapezoid_weights(grid) @ np.sum(a * b, axis=1))


def _trapz(vals: Array, dt: float) -> float:
    return float(dt * (vals.sum() - 0.5 * (vals[0] + vals[-1])))


# ---------------------------------------------------------------------------
# vector fields

def _stage_index_factor(grid: TimeGrid) -> float:
    return 2.0 * grid.steps / grid.horizon


def make_forward_field(objective: Objective, stage_u: Array, grid: TimeGrid):
    """Controlled descent field: thetadot = -grad J0(theta) + u(t)."""
    grad = gradient_function(objective)
    f = _stage_index_factor(grid)

    def field(t: float, theta: Array) -> Array:
        return stage_u[int(round(t * f))] - grad(theta)

    return field

def make_uncontrolled_field(objective: Objective):
    grad = gradient_function(objective)

    def field(t: float, theta: Array) -> Array:
        return -grad(theta)

    return field


def make_costate_field(objective: Objective, traj: Trajectory, forcing: float):
    """Costate field pdot = Hess(J0)(theta(t)) p - forcing * theta(t); the
    forward state at stage times is read from the stored trajectory."""
    hvp = hvp_function(objective)
    stage_states = np.empty((2 * traj.grid.steps + 1, traj.states.shape[1]))
    stage_states[0::2] = traj.states
    stage_states[1::2] = midpoint_states(traj)
    f = _stage_index_factor(traj.grid)

    def field(t: float, p: Array) -> Array:
        theta = stage_states[int(round(t * f))]
        return hvp(theta, p) - forcing * theta

    return field


def run_forward(objective: Objective, stage_u: Array, theta0: Array,
                grid: TimeGrid) -> Trajectory:
    return integrate_forward(make_forward_field(objective, stage_u, grid),
                             theta0, grid)


# ---------------------------------------------------------------------------
# Hamiltonians and pointwise costate rates

def hamiltonian_follower(objective: Objective, theta, p2, u1_value, u2_value,
                         partition: ControlPartition, alpha: float,
                         beta: float) -> float:
    theta = np.asarray(theta, dtype=float)
    u2m = np.asarray(u2_value, dtype=float) * partition.follower_mask
    velocity = (-gradient_function(objective)(theta)
                + np.asarray(u1_value, dtype=float) * partition.leader_mask
                + u2m)
    return float(velocity @ np.asarray(p2, dtype=float)
                 + 0.5 * alpha * (theta @ theta) + 0.5 * beta * (u2m @ u2m))


def hamiltonian_leader(objective: Objective, theta, p1, u1_value, u2_value,
                       partition: ControlPartition,
                       state_weight: float = 1.0) -> float:
    theta = np.asarray(theta, dtype=float)
    velocity = (-gradient_function(objective)(theta)
                + np.asarray(u1_value, dtype=float) * partition.leader_mask
                + np.asarray(u2_value, dtype=float) * partition.follower_mask)
    return float(velocity @ np.asarray(p1, dtype=float)
                 + 0.5 * state_weight * (theta @ theta))


def costate_rate_follower(objective: Objective, theta, p2, alpha: float) -> Array:
    """pdot2 = -dH2/dtheta = Hess(J0) p2 - alpha theta."""
    theta = np.asarray(theta, dtype=float)
    return hvp_function(objective)(theta, np.asarray(p2, dtype=float)) - alpha * theta


def costate_rate_leader(objective: Objective, theta, p1,
                        state_weight: float = 1.0) -> Array:
    theta = np.asarray(theta, dtype=float)
    return (hvp_function(objective)(theta, np.asarray(p1, dtype=float))
            - state_weight * theta)


# ---------------------------------------------------------------------------
# follower functional: J2, sweeps, gradient

def follower_forward(prob: FollowerProblem, u2: ControlSignal) -> Trajectory:
    stage = combined_stage_controls(prob.u1, u2, prob.partition, prob.grid)
    return run_forward(prob.objective, stage, prob.theta0, prob.grid)


def follower_backward(prob: FollowerProblem, traj: Trajectory) -> CostateTrajectory:
    field = make_costate_field(prob.objective, traj, prob.alpha)
    p_dim = traj.states.shape[1]
    return integrate_backward(field, np.zeros(p_dim), prob.grid,
                              TerminalKind.FOLLOWER_ZERO)


def follower_cost(prob: FollowerProblem, traj: Trajectory,
                  u2: ControlSignal) -> float:
    """J2 = integral of alpha/2 |theta|^2 + beta/2 |u2 on follower coords|^2."""
    u2n = control_node_values(u2, prob.grid) * prob.partition.follower_mask
    running = (0.5 * prob.alpha * np.sum(traj.states * traj.states, axis=1)
               + 0.5 * prob.beta * np.sum(u2n * u2n, axis=1))
    return _trapz(running, prob.grid.dt)


def _package_gradient(pointwise: Array, like: ControlSignal,
                      grid: TimeGrid) -> ControlGradient:
    if isinstance(like, BasisControl):
        basis = node_basis_matrix(grid, like.n_functions, like.basis)
        coeffs = basis.T @ (trapezoid_weights(grid)[:, None] * pointwise)
        return ControlGradient(pointwise=pointwise, coefficients=coeffs)
    return ControlGradient(pointwise=pointwise)


def follower_gradient_arrays(prob: FollowerProblem, u2: ControlSignal,
                             costate: CostateTrajectory) -> ControlGradient:
    u2n = control_node_values(u2, prob.grid)
    pointwise = (prob.beta * u2n + costate.costates) * prob.partition.follower_mask
    return _package_gradient(pointwise, u2, prob.grid)


def control_gradient_follower(prob: FollowerProblem,
                              u2: ControlSignal) -> ControlGradient:
    """dH2/du2 along the current sweep pair (runs both sweeps)."""
    traj = follower_forward(prob, u2)
    costate = follower_backward(prob, traj)
    return follower_gradient_arrays(prob, u2, costate)


# ---------------------------------------------------------------------------
# leader functional: merit, sweeps, gradient

def leader_forward(prob: LeaderProblem, u1: ControlSignal) -> Trajectory:
    stage = combined_stage_controls(u1, prob.u2, prob.partition, prob.grid)
    return run_forward(prob.objective, stage, prob.theta0, prob.grid)


def leader_phi(prob: LeaderProblem, theta_T: Array) -> float:
    return validation_phi(prob.objective.model, theta_T, prob.validation,
                          prob.objective.loss_scale)


def leader_terminal_costate(prob: LeaderProblem, theta_T: Array) -> Array:
    dphi = validation_phi_grad(prob.objective.model, theta_T, prob.validation,
                               prob.objective.loss_scale)
    if prob.terminal_mode is TerminalMode.PAPER_FIXED:
        return -dphi
    return prob.mu * (leader_phi(prob, theta_T) - prob.z) * dphi


def leader_backward(prob: LeaderProblem, traj: Trajectory) -> CostateTrajectory:
    field = make_costate_field(prob.objective, traj, prob.state_weight)
    p_T = leader_terminal_costate(prob, traj.terminal_state)
    return integrate_backward(field, p_T, prob.grid, TerminalKind.LEADER_TERMINAL)


def leader_running_cost(traj: Trajectory, state_weight: float = 1.0) -> float:
    running = 0.5 * state_weight * np.sum(traj.states * traj.states, axis=1)
    return _trapz(running, traj.grid.dt)


def leader_merit(prob: LeaderProblem, traj: Trajectory) -> Tuple[float, float, float]:
    """(line-search merit, J1, Phi at the endpoint).

    Penalty mode: J1 + (mu/2)(Phi - z)^2. Fixed-terminal mode: J1 - (Phi - z),
    the Lagrangian whose gradient that mode's costate produces.
    """
    j1 = leader_running_cost(traj, prob.state_weight)
    phi = leader_phi(prob, traj.terminal_state)
    if prob.terminal_mode is TerminalMode.PAPER_FIXED:
        return j1 - (phi - prob.z), j1, phi
    return j1 + 0.5 * prob.mu * (phi - prob.z) ** 2, j1, phi


def leader_gradient_arrays(prob: LeaderProblem, u1: ControlSignal,
                           costate: CostateTrajectory) -> ControlGradient:
    pointwise = costate.costates * prob.partition.leader_mask
    return _package_gradient(pointwise, u1, prob.grid)


def control_gradient_leader(prob: LeaderProblem,
                            u1: ControlSignal) -> ControlGradient:
    """dH1/du1 = leader-masked costate (no explicit control cost in H1)."""
    traj = leader_forward(prob, u1)
    costate = leader_backward(prob, traj)
    return leader_gradient_arrays(prob, u1, costate)


# ---------------------------------------------------------------------------
# control updates

def update_control(u: ControlSignal, gradient: ControlGradient,
                   step: float) -> ControlSignal:
    """One descent step u - step * gradient in u's own representation,
    clamped to the amplitude bound."""
    if isinstance(u, BasisControl):
        if gradient.coefficients is None:
            raise ValueError("basis control update needs coefficient gradient")
        coeffs = u.coefficients - step * gradient.coefficients
        return BasisControl(u.grid, coeffs, u.basis, u.u_max)
    values = np.clip(u.values - step * gradient.pointwise, -u.u_max, u.u_max)
    return GridControl(u.grid, values, u.u_max)


# ---------------------------------------------------------------------------
# finite-difference certification protocol

def smooth_random_signal(rng: np.random.Generator, grid: TimeGrid, dim: int,
                         amplitude: float, n_modes: int = 4) -> Array:
    """Low-frequency cosine mix on grid nodes; used for check directions."""
    coeffs = rng.normal(size=(n_modes, dim)) * amplitude
    phase = np.pi * grid.nodes / grid.horizon
    out = np.zeros((grid.steps + 1, dim))
    for k in range(n_modes):
        out += coeffs[k] * np.cos(k * phase)[:, None]
    return out


def gradient_check(objective: Objective, validation: Dataset,
                   partition: ControlPartition, theta0, grid: TimeGrid,
                   config: SolverConfig, seed: int = 0, n_directions: int = 20,
                   fd_step: float = 1e-5, corruption: float = 0.0) -> List[dict]:
    """Compare adjoint gradients against central finite differences of the
    associated functionals, for random smooth base controls and directions.

    Returns one record per (functional, direction). `corruption` is a fault
    injection hook: it is added to every adjoint gradient before comparison,
    so any nonzero value must make the check fail.

    The leader comparison shrinks its difference step with mu: the penalty
    term multiplies higher derivatives of the merit by mu, so a fixed step
    would lose accuracy to truncation on hard-penalty configurations.
    """
    rng = np.random.default_rng(seed)
    theta0 = np.asarray(theta0, dtype=float)
    p = partition.dimension
    base_amp = 0.1
    u1 = GridControl(grid, smooth_random_signal(rng, grid, p, base_amp), config.u_max)
    u2 = GridControl(grid, smooth_random_signal(rng, grid, p, base_amp), config.u_max)

    fprob = FollowerProblem(objective, config.alpha, config.beta, partition,
                            u1, grid, theta0)
    lprob = LeaderProblem(objective, validation, config.z, config.mu, partition,
                          u2, grid, theta0, config.terminal_mode)

    g2 = control_gradient_follower(fprob, u2).pointwise + corruption
    traj = leader_forward(lprob, u1)
    costate = leader_backward(lprob, traj)
    g1 = leader_gradient_arrays(lprob, u1, costate).pointwise + corruption

    def j2_at(values: Array) -> float:
        cand = GridControl(grid, values, config.u_max)
        return follower_cost(fprob, follower_forward(fprob, cand), cand)

    def merit_at(values: Array) -> float:
        cand = GridControl(grid, values, config.u_max)
        return leader_merit(lprob, leader_forward(lprob, cand))[0]

    fd_step_leader = fd_step / np.sqrt(1.0 + config.mu)
    records = []
    for i in range(n_directions):
        d = smooth_random_signal(rng, grid, p, 1.0)
        d2 = d * partition.follower_mask
        fd = (j2_at(u2.values + fd_step * d2) - j2_at(u2.values - fd_step * d2)) \
            / (2 * fd_step)
        adj = grid_inner_product(grid, g2, d2)
        denom = max(abs(fd), 1e-12)
        records.append({"functional": "follower", "direction": i,
                        "fd": fd, "adjoint": adj,
                        "rel_error": abs(fd - adj) / denom})
        d1 = d * partition.leader_mask
        fd = (merit_at(u1.values + fd_step_leader * d1)
              - merit_at(u1.values - fd_step_leader * d1)) / (2 * fd_step_leader)
        adj = grid_inner_product(grid, g1, d1)
        denom = max(abs(fd), 1e-12)
        records.append({"functional": "leader", "direction": i,
                        "fd": fd, "adjoint": adj,
                        "rel_error": abs(fd - adj) / denom})
    return records
