"""Decision-theoretic probabilistic logic programs: parse, ground, infer, decide, learn."""

from .engine import EUReport, Strategy, eu_fast, expected_utility, marginal, strategy_from_assignment
from .errors import DdtepError, ProgramError, ResourceLimitError
from .grounder import GroundProgram, ground
from .learner import Dataset, FitResult, em_fit, parse_dataset
from .solver import Solution, check_guarantee, solve_exhaustive, solve_local, verify_bounds
from .syntax import CoreProgram, Program, desugar, parse_atom, parse_program, render


def load(text: str, extra=(), queries=()) -> GroundProgram:
    """Parse, desugar and ground program text in one go."""
    return ground(desugar(parse_program(text)), extra=extra, queries=queries)


__all__ = [
    "CoreProgram",
    "Dataset",
    "DdtepError",
    "EUReport",
    "FitResult",
    "GroundProgram",
    "Program",
    "ProgramError",
    "ResourceLimitError",
    "Solution",
    "Strategy",
    "check_guarantee",
    "desugar",
    "em_fit",
    "eu_fast",
    "expected_utility",
    "ground",
    "load",
    "marginal",
    "parse_atom",
    "parse_dataset",
    "parse_program",
    "render",
    "solve_exhaustive",
    "solve_local",
    "strategy_from_assignment",
    "verify_bounds",
]
