"""Learning ODE/PDE solution fields from their partial derivatives, with
distillation-based transfer across domains, time spans, and parameters.
"""

from .collocation import CollocationSet
from .estimator import DerivativeRegressor
from .jets import InputDerivatives, input_derivatives, loss_gradient, propagate
from .losses import LossSpec, Method, composite_loss, mse
from .network import Network, forward, init_network
from .problems import (Problem, ProblemSpec, make_problem, pde_residual,
                       pendulum_g_residual, pendulum_rhs, vorticity_error)
from .solvers import (GridField, continuity_fv_solve, cubic_interpolate,
                      empirical_derivative, kdv_spectral_solve,
                      rk4_trajectory)
from .train import TrainConfig, add_noise, adam_step, lbfgs_minimize, train
from .transfer import (TeacherSnapshot, TransferPlan, TransferStage,
                       run_transfer_pipeline, snapshot_teacher, student_loss)
from .evaluation import MetricsReport, error_field, evaluate

__version__ = "0.1.0"

__all__ = [
    "CollocationSet", "DerivativeRegressor", "GridField", "InputDerivatives",
    "LossSpec", "Method", "MetricsReport", "Network", "Problem",
    "ProblemSpec", "TeacherSnapshot", "TrainConfig", "TransferPlan",
    "TransferStage", "add_noise", "adam_step", "composite_loss",
    "continuity_fv_solve", "cubic_interpolate", "empirical_derivative",
    "error_field", "evaluate", "forward", "init_network",
    "input_derivatives", "kdv_spectral_solve", "lbfgs_minimize",
    "loss_gradient", "make_problem", "mse", "pde_residual",
    "pendulum_g_residual", "pendulum_rhs", "propagate", "rk4_trajectory",
    "run_transfer_pipeline", "snapshot_teacher", "student_loss", "train",
    "vorticity_error",
]
