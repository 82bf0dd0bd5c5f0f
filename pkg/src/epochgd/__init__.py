"""Epoch-GD: optimal-rate stochastic subgradient descent for strongly convex problems."""
from .core import Domain, Optimum, Problem, ProblemSpec, lambda_hk_from_standard_strong_convexity, validate_problem
from .optimizers import (
    EpochSchedule,
    RunTrace,
    baseline_sgd_decaying,
    build_epoch_schedule,
    epoch_gd,
    epoch_gd_high_prob,
    sgd_inner_loop,
    total_budget_bound,
)
from .problems import load_libsvm, make_quadratic, make_svm, reference_optimum

__version__ = "0.1.0"
