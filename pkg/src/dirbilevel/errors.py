"""Exception hierarchy shared by all modules."""


class DirBilevelError(Exception):
    """Base class for every error raised by the package."""


class InputError(DirBilevelError):
    """Malformed or inconsistent user input (CLI exit code 2)."""


class ProblemSyntaxError(InputError):
    """Problem-file text that does not follow the grammar."""

    def __init__(self, message, line=0, col=0):
        self.line = line
        self.col = col
        super().__init__(f"line {line}, col {col}: {message}")


class DimensionError(InputError):
    """Variable index outside the declared dimensions."""


class ExponentError(InputError):
    """Power whose exponent is not an admissible rational literal."""


class BoxMissing(InputError):
    """The lower-level solver needs a search box and none was given."""


class UnknownInstance(InputError):
    """Built-in instance id not recognised."""


class NumericalError(DirBilevelError):
    """A computation could not be completed (CLI exit code 3)."""


class DomainError(NumericalError):
    """Evaluation outside the domain of an expression."""

    def __init__(self, message, loc=None):
        self.loc = loc
        if loc is not None:
            message = f"{message} (line {loc[0]}, col {loc[1]})"
        super().__init__(message)


class NumericalFailure(NumericalError):
    """Iteration guard exceeded or certificate verification failed."""


class DimensionTooLarge(NumericalError):
    """Exhaustive enumeration requested above the dimension guard."""


class TooManyActiveConstraints(NumericalError):
    """Subset enumeration requested above the active-set guard."""


class NoFeasiblePoint(NumericalError):
    """No feasible lower-level point was found in the search box."""


class InnerLPUnbounded(NumericalError):
    """The multiplier LP of the directional derivative is unbounded."""


class EmptyMultiplierSet(NumericalError):
    """The lower-level multiplier set is empty at a solution."""


class InconclusiveUnbounded(NumericalError):
    """A polytope that must be bounded carries rays."""
