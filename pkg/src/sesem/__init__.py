"""Derivative-free nonlinear least squares with reduced subproblems and
sequential-secant acceleration, plus a Saint-Venant Manning-coefficient
estimation testbed."""

__version__ = "0.1.0"

from .core import (BudgetExhausted, ResidualProblem, RngStreams, SolveResult, SolverConfig,
                   objective_value)
from .framework import check_invariants, solve

__all__ = [
    "BudgetExhausted",
    "ResidualProblem",
    "RngStreams",
    "SolveResult",
    "SolverConfig",
    "check_invariants",
    "objective_value",
    "solve",
]
