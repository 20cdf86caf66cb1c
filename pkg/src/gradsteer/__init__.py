"""Parameter estimation as a leader/follower optimal-control problem over a
controlled training gradient flow.

The follower shapes the trajectory with a regularization cost; the leader
steers the terminal parameters so a validation functional hits a target
accuracy level. Both act through first-order control corrections computed
from costate (adjoint) sweeps.
"""

__version__ = "0.1.0"

from .core import (BasisControl, ControlPartition, Dataset, GridControl,
                   HistoryRecord, RunReport, SolverConfig, SplitSpec,
                   TerminalMode, TimeGrid, combine_controls,
                   constant_grid_control, eval_control, make_time_grid,
                   zero_grid_control)
from .models import (LossScale, ModelKind, ModelSpec, Objective,
                     SingularityError, loss, objective_gradient, objective_hvp,
                     objective_value, predict, validation_phi,
                     validation_phi_grad)
from .integrate import (DivergenceError, integrate_backward, integrate_forward,
                        interpolate_state)
from .adjoint import (ControlGradient, FollowerProblem, LeaderProblem,
                      control_gradient_follower, control_gradient_leader,
                      gradient_check, hamiltonian_follower, hamiltonian_leader)
from .follower import FollowerResult, NoProgressError, solve_follower
from .leader import (LeaderStepResult, ResidualStats, leader_step,
                     residual_stats, solve_nested)

__all__ = [
    "BasisControl", "ControlGradient", "ControlPartition", "Dataset",
    "DivergenceError", "FollowerProblem", "FollowerResult", "GridControl",
    "HistoryRecord", "LeaderProblem", "LeaderStepResult", "LossScale",
    "ModelKind", "ModelSpec", "NoProgressError", "Objective", "ResidualStats",
    "RunReport", "SingularityError", "SolverConfig", "SplitSpec",
    "TerminalMode", "TimeGrid", "combine_controls", "constant_grid_control",
    "control_gradient_follower", "control_gradient_leader", "eval_control",
    "gradient_check", "hamiltonian_follower", "hamiltonian_leader",
    "integrate_backward", "integrate_forward", "interpolate_state",
    "leader_step", "loss", "make_time_grid", "objective_gradient",
    "objective_hvp", "objective_value", "predict", "residual_stats",
    "solve_follower", "solve_nested", "validation_phi", "validation_phi_grad",
    "zero_grid_control",
]
