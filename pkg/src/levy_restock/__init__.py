"""Inventory control with continuous and Poisson-timed replenishment under
spectrally negative Levy dynamics: optimal hybrid barriers, semi-explicit
cost functions, numerical optimality certification, and Monte Carlo
cross-validation."""

from .costs import (
    CostSpec,
    HybridPolicy,
    f_tilde_prime,
    gamma_big,
    gamma_small,
    value_derivative,
    value_fprime,
    value_holding,
    value_replenish,
    value_second_derivative,
    value_total,
)
from .model import LevyModel, RootSet, all_roots, laplace_exponent, phi, psi_derivative
from .scale import KernelSet, ScaleSet, build_scale_set
from .solver import (
    BracketFailure,
    PolicySolution,
    b_of_a,
    pure_discounted_barrier,
    pure_discounted_value,
    pure_regular_barrier,
    pure_regular_value,
    solve_barriers,
    thresholds,
)
from .verify import VerificationReport, full_report

__all__ = [
    "LevyModel",
    "RootSet",
    "laplace_exponent",
    "psi_derivative",
    "phi",
    "all_roots",
    "CostSpec",
    "HybridPolicy",
    "f_tilde_prime",
    "gamma_big",
    "gamma_small",
    "value_total",
    "value_holding",
    "value_replenish",
    "value_derivative",
    "value_second_derivative",
    "value_fprime",
    "ScaleSet",
    "KernelSet",
    "build_scale_set",
    "PolicySolution",
    "BracketFailure",
    "solve_barriers",
    "thresholds",
    "b_of_a",
    "pure_discounted_barrier",
    "pure_discounted_value",
    "pure_regular_barrier",
    "pure_regular_value",
    "VerificationReport",
    "full_report",
]

__version__ = "0.1.0"
