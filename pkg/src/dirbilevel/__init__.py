"""Directional sensitivity and constraint-qualification analysis of bilevel
programs through the lower-level value function."""

from .errors import DirBilevelError, InputError, NumericalError
from .exprdsl import eval_dual, evaluate, parse_expr, parse_program, unparse
from .lower import LowerConfig, NumericLower, Verdict, directional_solutions, solve_lower
from .model import BilevelProgram, DirectionalContext, first_order
from .oracles import EX31, EX51, get_instance

__all__ = [
    "BilevelProgram", "DirBilevelError", "DirectionalContext", "EX31", "EX51", "InputError",
    "LowerConfig", "NumericLower", "NumericalError", "Verdict", "directional_solutions", "eval_dual",
    "evaluate", "first_order", "get_instance", "parse_expr", "parse_program", "solve_lower", "unparse",
]

__version__ = "0.1.0"
