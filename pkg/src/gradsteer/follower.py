"""Inner loop: successive approximation of the follower's optimal response
to a fixed leader control (forward sweep, backward sweep, damped control
correction with a backtracking safeguard)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

from .adjoint import (FollowerProblem, follower_backward, follower_cost,
                      follower_forward, follower_gradient_arrays, update_control)
from .core import ControlSignal, CostateTrajectory, Trajectory
from .integrate import DivergenceError

MAX_HALVINGS = 30


class NoProgressError(RuntimeError):
    """Backtracking could not find a descent step; `best` carries the best
    iterate reached before the stall."""

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True)
class FollowerResult:
    u2_star: ControlSignal
    trajectory: Trajectory
    costate: CostateTrajectory
    J2_value: float
    inner_iterations: int
    grad_norm: float
    converged: bool
    gamma_last: float                 # last accepted step size, 0 if none
    j2_history: Tuple[float, ...]     # accepted-iterate costs, non-increasing

    @property
    def progressed(self) -> bool:
        return self.gamma_last > 0.0


def solve_follower(prob: FollowerProblem, u2_init: ControlSignal,
                   inner_tol: float = 1e-6, max_inner: int = 500,
                   gamma2: float = 1.0) -> FollowerResult:
    """Iterate sweeps and corrections until the pointwise extremum residual
    (beta*u2 + p2 on follower coordinates) drops below inner_tol.

    Returns the converged iterate, or the best-cost iterate if the iteration
    cap is reached. gamma2 = 0 returns after one sweep pair without updating.
    Raises NoProgressError when a positive step cannot decrease J2 after
    MAX_HALVINGS halvings.
    """
    u2 = u2_init
    best = None  # (j2, u2, traj, costate, gnorm)
    history = []
    gamma_last = 0.0

    def result(snapshot, iterations, converged) -> FollowerResult:
        j2, u2_s, traj, costate, gnorm = snapshot
        return FollowerResult(
            u2_star=u2_s, trajectory=traj, costate=costate, J2_value=j2,
            inner_iterations=iterations, grad_norm=gnorm, converged=converged,
            gamma_last=gamma_last, j2_history=tuple(history))

    for it in range(1, max_inner + 1):
        traj = follower_forward(prob, u2)
        j2 = follower_cost(prob, traj, u2)
        costate = follower_backward(prob, traj)
        grad = follower_gradient_arrays(prob, u2, costate)
        gnorm = grad.norm_inf
        history.append(j2)
        snapshot = (j2, u2, traj, costate, gnorm)
        if best is None or j2 < best[0]:
            best = snapshot
        if grad.update_norm <= inner_tol:
            # for a basis control this is coefficient-space stationarity; the
            # pointwise residual (and the converged flag) may stay above tol
            # by the representation error
            return result(snapshot, it, gnorm <= inner_tol)
        if gamma2 == 0.0:
            return result(snapshot, it, False)

        accepted = None
        step = gamma2
        for _ in range(MAX_HALVINGS + 1):
            candidate = update_control(u2, grad, step)
            try:
                cand_traj = follower_forward(prob, candidate)
            except DivergenceError:
                step *= 0.5
                continue
            if follower_cost(prob, cand_traj, candidate) < j2:
                accepted = candidate
                break
            step *= 0.5
        if accepted is None:
            raise NoProgressError(
                f"follower backtracking stalled at iteration {it} "
                f"(residual {gnorm:.3e})",
                best=result(best, it, False))
        u2 = accepted
        gamma_last = step

    return result(best, max_inner, False)
