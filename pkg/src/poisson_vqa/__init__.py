"""Variational quantum solver for finite-difference Poisson problems, simulated classically."""
from .ansatz import AnsatzSpec, ansatz_state, build_ansatz
from .cost import VQAProblem
from .measure import Exact, Noisy, Shots, circuit_count, estimate_expectation, plan_expectation
from .optimizer import OptimizerConfig, minimize, multistart
from .poisson import BoundaryCondition, Device, Explicit, PoissonSpec, StepFunction, build_matrix, solve_exact

__all__ = [
    "AnsatzSpec",
    "BoundaryCondition",
    "Device",
    "Exact",
    "Explicit",
    "Noisy",
    "OptimizerConfig",
    "PoissonSpec",
    "Shots",
    "StepFunction",
    "VQAProblem",
    "ansatz_state",
    "build_ansatz",
    "build_matrix",
    "circuit_count",
    "estimate_expectation",
    "minimize",
    "multistart",
    "plan_expectation",
    "solve_exact",
]
