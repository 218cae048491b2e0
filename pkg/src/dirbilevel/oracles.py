"""Built-in instances with closed-form value functions and solution maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NoFeasiblePoint, UnknownInstance
from .exprdsl import parse_program

SQ3 = math.sqrt(3.0)

EX31_TEXT = """\
# nonconvex concave lower level; upper bounds -1 <= x <= 1
dims: n=1 m=1
F = (x1-y1-1)^(5/3) + 4*(x1+y1+1)^(5/3)
f = -(x1+y1)^2 + x1^3*(x1+y1-1)
G = [ -1-x1 ; x1-1 ]
g = [ -y1-x1-1 ; y1+x1-1 ]
box: y in [-3,3]^1
"""

EX51_TEXT = """\
# disc-and-halfplane lower level with two global minimizers at x = 0
dims: n=1 m=1
F = (sqrt(3)*x1 - y1 - sqrt(3))^2 + x1 + sqrt(3)*y1 + 3
f = 1 - (x1-y1)^2
g = [ (x1-1)^2 + y1^2 - 4 ; -sqrt(3)*x1 - y1 - sqrt(3) ]
box: y in [-3,3]^1
"""


def _ex31_solutions(x):
    x = float(np.atleast_1d(x)[0])
    if x > 0:
        return np.array([[-x - 1.0]])
    if x < 0:
        return np.array([[-x + 1.0]])
    return np.array([[-1.0], [1.0]])


def _ex31_value(x):
    x = float(np.atleast_1d(x)[0])
    return -1.0 - 2.0 * x**3 if x > 0 else -1.0


def _ex31_vprime(u):
    return 0.0


def _ex51_arc(x):
    r = 4.0 - (x - 1.0) ** 2
    if r < 0:
        raise NoFeasiblePoint(f"lower level infeasible at x={x} (outside [-1, 3])")
    return math.sqrt(r)


def _ex51_solutions(x):
    x = float(np.atleast_1d(x)[0])
    if x < 0:
        return np.array([[_ex51_arc(x)]])
    if x > 0:
        return np.array([[-_ex51_arc(x)]])
    return np.array([[-SQ3], [SQ3]])


def _ex51_value(x):
    x = float(np.atleast_1d(x)[0])
    if x < 0:
        return 1.0 - (x - _ex51_arc(x)) ** 2
    if x > 0:
        return 1.0 - (x + _ex51_arc(x)) ** 2
    return -2.0


def _ex51_vprime(u):
    u = float(np.atleast_1d(u)[0])
    return -(2 * SQ3 + 2) * u if u > 0 else (2 * SQ3 - 2) * u


@dataclass(frozen=True)
class OracleInstance:
    """A built-in program together with its exact lower-level data.

    ``value``/``solutions`` follow the same interface as
    :class:`dirbilevel.lower.NumericLower`, so they can stand in for the
    numerical solver anywhere (``exact = True``).
    """

    ident: str
    text: str
    point: tuple
    value_fn: Callable
    solutions_fn: Callable
    vprime_fn: Callable
    validation_grid: tuple
    expected: dict = field(default_factory=dict)
    exact: bool = True

    @property
    def program(self):
        return parse_program(self.text)

    @property
    def xbar(self):
        return np.array(self.point[0], dtype=float)

    @property
    def ybar(self):
        return np.array(self.point[1], dtype=float)

    def value(self, x):
        return self.value_fn(x)

    def solutions(self, x):
        return self.solutions_fn(x)

    def vprime(self, u):
        """Closed-form ``V'(xbar;u)`` at the instance's base point."""
        return self.vprime_fn(u)

    def grid(self):
        lo, hi, count = self.validation_grid
        return np.linspace(lo, hi, count)


EX31 = OracleInstance(
    "EX31", EX31_TEXT, ((0.0,), (-1.0,)), _ex31_value, _ex31_solutions, _ex31_vprime,
    (-1.0, 1.0, 100),
    expected={
        "critical_cone_members": [((1.0, -1.0), True), ((-1.0, 1.0), True), ((1.0, 0.0), False),
                                  ((0.0, 0.0), True)],
        "calmness_violated_direction": (-1.0, 1.0),
        "calmness_evidence_direction": (1.0, -1.0),
    },
)

EX51 = OracleInstance(
    "EX51", EX51_TEXT, ((0.0,), (-SQ3,)), _ex51_value, _ex51_solutions, _ex51_vprime,
    (-0.95, 2.95, 100),
    expected={
        "dderiv_right": -(2 * SQ3 + 2),
        "theta_singleton": -2 * SQ3 - 2,
        "multiplier_vertices": [(1.0, 0.0), (0.0, 2 * SQ3)],
        "direction": (SQ3, -1.0),
        "certificate": {"lambda_v": 0.5, "lam": (1.0, 0.0), "lambda_g": (1.0, 0.0)},
        "critical_cone_members": [((SQ3, -1.0), True), ((-SQ3, 1.0), False), ((0.0, 0.0), True)],
    },
)

INSTANCES = {"EX31": EX31, "EX51": EX51}


def get_instance(ident):
    try:
        return INSTANCES[ident.upper()]
    except KeyError:
        raise UnknownInstance(f"unknown built-in instance {ident!r}; choose from {sorted(INSTANCES)}") from None
