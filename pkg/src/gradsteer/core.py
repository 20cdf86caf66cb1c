"""Shared domain types: datasets, time grids, control signals, partitions,
trajectories, solver configuration and run reports.

Everything here is immutable after construction (arrays are marked
read-only), so values can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

Array = NDArray[np.float64]


def _frozen_array(values, shape_hint: str) -> Array:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{shape_hint} contains non-finite entries")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Dataset:
    """Labelled samples: `inputs` is (m, d), `outputs` is (m,)."""

    inputs: Array
    outputs: Array

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs[:, None]
        object.__setattr__(self, "inputs", _frozen_array(inputs, "inputs"))
        object.__setattr__(self, "outputs", _frozen_array(self.outputs, "outputs"))
        if self.outputs.ndim != 1:
            raise ValueError("outputs must be one-dimensional")
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs and outputs must have equal length")
        if len(self.outputs) < 1:
            raise ValueError("dataset needs at least one sample")

    def __len__(self) -> int:
        return len(self.outputs)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.inputs[idx], self.outputs[idx])


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/validation index sets into a source dataset (0-based)."""

    train_indices: Tuple[int, ...]
    validation_indices: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_indices", tuple(int(i) for i in self.train_indices))
        object.__setattr__(self, "validation_indices",
                           tuple(int(i) for i in self.validation_indices))
        if set(self.train_indices) & set(self.validation_indices):
            raise ValueError("train and validation index sets overlap")
        if not self.train_indices or not self.validation_indices:
            raise ValueError("both splits must be non-empty")

    def check_bounds(self, dataset: Dataset) -> None:
        m = len(dataset)
        for i in self.train_indices + self.validation_indices:
            if not 0 <= i < m:
                raise ValueError(f"split index {i} outside dataset of size {m}")

    def train(self, dataset: Dataset) -> Dataset:
        self.check_bounds(dataset)
        return dataset.subset(self.train_indices)

    def validation(self, dataset: Dataset) -> Dataset:
        self.check_bounds(dataset)
        return dataset.subset(self.validation_indices)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with `steps` intervals (steps + 1 nodes)."""

    horizon: float
    steps: int
    nodes: Array = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.horizon > 0.0 and np.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if self.steps < 2:
            raise ValueError("need at least 2 steps")
        nodes = np.linspace(0.0, self.horizon, self.steps + 1)
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def stage_times(self) -> Array:
        """Nodes interleaved with interval midpoints, length 2*steps + 1."""
        out = np.empty(2 * self.steps + 1)
        out[0::2] = self.nodes
        out[1::2] = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        out.flags.writeable = False
        return out


def make_time_grid(horizon: float, steps: int) -> TimeGrid:
    """Uniform time grid covering [0, horizon] with the given step count."""
    return TimeGrid(horizon=float(horizon), steps=int(steps))


@dataclass(frozen=True)
class GridControl:
    """Control stored as node values on a TimeGrid; piecewise-linear in time."""

    grid: TimeGrid
    values: Array
    u_max: float = 10.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.grid.steps + 1:
            raise ValueError("need one value vector per grid node")
        object.__setattr__(self, "values", _frozen_array(values, "control values"))
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")
        if np.abs(self.values).max() > self.u_max + 1e-12:
            raise ValueError("control values exceed the amplitude bound")

    @property
    def dimension(self) -> int:
        return self.values.shape[1]


SUPPORTED_BASES = ("legendre",)


@dataclass(frozen=True)
class BasisControl:
    """Control as a finite basis expansion sum_k a_k * phi_k(t).

    phi_k are Legendre polynomials of degree k-1 rescaled to [0, T]; they are
    bounded by 1 in magnitude, so coefficients relate directly to amplitude.
    """

    grid: TimeGrid
    coefficients: Array
    basis: str = "legendre"
    u_max: float = 10.0

    def __post_init__(self):
        coeffs = np.asarray(self.coefficients, dtype=float)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        object.__setattr__(self, "coefficients", _frozen_array(coeffs, "coefficients"))
        if self.basis not in SUPPORTED_BASES:
            raise ValueError(f"unsupported basis {self.basis!r}")
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")

    @property
    def dimension(self) -> int:
        return self.coefficients.shape[1]

    @property
    def n_functions(self) -> int:
        return self.coefficients.shape[0]


ControlSignal = Union[GridControl, BasisControl]


def zero_grid_control(grid: TimeGrid, dimension: int, u_max: float = 10.0) -> GridControl:
    return GridControl(grid, np.zeros((grid.steps + 1, dimension)), u_max)


def constant_grid_control(grid: TimeGrid, value, u_max: float = 10.0) -> GridControl:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return GridControl(grid, np.tile(value, (grid.steps + 1, 1)), u_max)


def _basis_matrix(control: BasisControl, times: Array) -> Array:
    # rows: evaluation times, cols: phi_1..phi_K (Legendre on [0, T])
    x = 2.0 * np.asarray(times) / control.grid.horizon - 1.0
    k = control.n_functions
    return np.polynomial.legendre.legvander(x, k - 1)


def eval_control_many(u: ControlSignal, times: Array) -> Array:
    """Evaluate a control at many times at once; rows are time points."""
    times = np.asarray(times, dtype=float)
    if times.size and (times.min() < -1e-12 or times.max() > u.grid.horizon + 1e-12):
        raise ValueError("evaluation time outside [0, T]")
    if isinstance(u, GridControl):
        out = np.empty((times.size, u.dimension))
        for j in range(u.dimension):
            out[:, j] = np.interp(times, u.grid.nodes, u.values[:, j])
    else:
        out = _basis_matrix(u, times) @ u.coefficients
    return np.clip(out, -u.u_max, u.u_max)


def eval_control(u: ControlSignal, t: float) -> Array:
    """Control value at a single time, clamped to [-u_max, u_max]."""
    return eval_control_many(u, np.array([float(t)]))[0]


@dataclass(frozen=True)
class ControlPartition:
    """Complementary 0/1 coordinate masks assigning each control coordinate
    to exactly one of the two agents."""

    leader_mask: Array
    follower_mask: Array

    def __post_init__(self):
        lm = np.asarray(self.leader_mask, dtype=float)
        fm = np.asarray(self.follower_mask, dtype=float)
        if lm.shape != fm.shape or lm.ndim != 1:
            raise ValueError("masks must be 1-d and of equal length")
        if not (np.all(np.isin(lm, (0.0, 1.0))) and np.all(np.isin(fm, (0.0, 1.0)))):
            raise ValueError("masks must be binary")
        if np.any(lm * fm != 0.0):
            raise ValueError("masks overlap")
        if np.any(lm + fm != 1.0):
            raise ValueError("masks must cover every coordinate")
        lm.flags.writeable = False
        fm.flags.writeable = False
        object.__setattr__(self, "leader_mask", lm)
        object.__setattr__(self, "follower_mask", fm)

    @classmethod
    def from_leader(cls, leader_mask) -> "ControlPartition":
        lm = np.asarray(leader_mask, dtype=float)
        return cls(lm, 1.0 - lm)

    @property
    def dimension(self) -> int:
        return self.leader_mask.shape[0]


def combine_controls(u1: ControlSignal, u2: ControlSignal,
                     partition: ControlPartition, t: float) -> Array:
    """Masked superposition u1(t) on leader coordinates, u2(t) on follower ones."""
    if u1.dimension != partition.dimension or u2.dimension != partition.dimension:
        raise ValueError("control dimension does not match the partition")
    return (eval_control(u1, t) * partition.leader_mask
            + eval_control(u2, t) * partition.follower_mask)


@dataclass(frozen=True)
class Trajectory:
    """States on a time grid; `derivs` holds the vector field at each node
    when produced by the integrator (needed for Hermite interpolation)."""

    grid: TimeGrid
    states: Array
    derivs: Optional[Array] = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.shape[0] != self.grid.steps + 1:
            raise ValueError("state count must equal node count")
        object.__setattr__(self, "states", _frozen_array(states, "states"))
        if self.derivs is not None:
            derivs = np.asarray(self.derivs, dtype=float)
            if derivs.shape != states.shape:
                raise ValueError("derivs shape must match states")
            object.__setattr__(self, "derivs", _frozen_array(derivs, "derivs"))

    @property
    def terminal_state(self) -> Array:
        return self.states[-1]


class TerminalKind(Enum):
    FOLLOWER_ZERO = "follower_zero"
    LEADER_TERMINAL = "leader_terminal"


@dataclass(frozen=True)
class CostateTrajectory:
    grid: TimeGrid
    costates: Array
    terminal_kind: TerminalKind

    def __post_init__(self):
        costates = np.asarray(self.costates, dtype=float)
        if costates.shape[0] != self.grid.steps + 1:
            raise ValueError("costate count must equal node count")
        object.__setattr__(self, "costates", _frozen_array(costates, "costates"))
        if self.terminal_kind is TerminalKind.FOLLOWER_ZERO and np.any(costates[-1] != 0.0):
            raise ValueError("follower costate must vanish at the final time")


class TerminalMode(Enum):
    PENALTY = "penalty"
    PAPER_FIXED = "paper_fixed"


@dataclass(frozen=True)
class SolverConfig:
    """Weights, step sizes, tolerances and caps for the nested solver.

    gamma1/gamma2 of exactly 0 are accepted as an explicit degenerate mode in
    which the corresponding control is never updated.
    """

    alpha: float = 0.01
    beta: float = 0.1
    gamma1: float = 0.5
    gamma2: float = 1.0
    eps_tol: float = 1e-5
    inner_tol: float = 1e-6
    z: float = 0.005
    mu: float = 50.0
    max_outer: int = 2000
    max_inner: int = 500
    u_max: float = 10.0
    terminal_mode: TerminalMode = TerminalMode.PENALTY

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("alpha and beta must be positive")
        for name in ("gamma1", "gamma2"):
            g = getattr(self, name)
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eps_tol <= 0 or self.inner_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.z < 0:
            raise ValueError("z must be non-negative")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.u_max <= 0:
            raise ValueError("u_max must be positive")


@dataclass(frozen=True)
class HistoryRecord:
    """One outer iteration: cost values and extremum residual norms."""

    j1: float
    j2: float
    phi: float
    leader_grad_norm: float
    follower_grad_norm: float
    gamma1_used: float
    gamma2_used: float


@dataclass(frozen=True)
class RunReport:
    theta_final: Array
    J1_value: float
    J2_value: float
    Phi_value: float
    outer_iterations: int
    converged: bool
    history: Tuple[HistoryRecord, ...]
    u1: ControlSignal
    u2: ControlSignal

    def __post_init__(self):
        object.__setattr__(self, "theta_final",
                           _frozen_array(self.theta_final, "theta_final"))
