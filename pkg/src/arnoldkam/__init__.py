"""Quantitative KAM tori for nearly integrable Hamiltonians."""
from .series import FourierTaylor, DomainError
from .constants import build_constants, epsilon_star, epsilon_sharp, check_smallness
from .diophantine import best_alpha, check_diophantine
from .kam_step import StepInput, StepFailure, assemble_step
from .kam_iterate import Problem, iterate, compose_and_extract
from .verify import invariance_error, pendulum_exact_curve, SeparatrixError
from .shell import ArnoldKAM, RunConfig, catalog, load_config, run_pipeline

__all__ = [
    "FourierTaylor", "DomainError", "build_constants", "epsilon_star", "epsilon_sharp",
    "check_smallness", "best_alpha", "check_diophantine", "StepInput", "StepFailure",
    "assemble_step", "Problem", "iterate", "compose_and_extract", "invariance_error",
    "pendulum_exact_curve", "SeparatrixError", "ArnoldKAM", "RunConfig", "catalog",
    "load_config", "run_pipeline",
]
