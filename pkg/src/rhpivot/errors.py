"""Exception types shared across the package.

Every error that signals bad input derives from :class:`InputError` so the
command line front end can map it to exit code 1; numerical non-convergence
derives from :class:`ConvergenceError` (exit code 2).
"""


class RHPivotError(Exception):
    """Base class for all package errors."""


class InputError(RHPivotError, ValueError):
    """Invalid input data, configuration or model structure."""


class ConvergenceError(RHPivotError):
    """An iterative routine stopped before reaching its tolerance."""


# choice probabilities
class NoAvailableMode(InputError):
    pass


class EmptyNest(InputError):
    pass


class ModelStructureError(InputError):
    pass


# weighting
class EmptyCell(InputError):
    def __init__(self, variable, category):
        self.variable = variable
        self.category = category
        super().__init__(
            f"category {category!r} of variable {variable!r} has a positive "
            "target share but no respondents")


class UnknownVariable(InputError):
    pass


class DegenerateVariance(InputError):
    pass


# estimation
class MissingAttribute(InputError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"missing column {column!r}")


class Nonidentifiable(InputError):
    def __init__(self, coefficient, reason):
        self.coefficient = coefficient
        super().__init__(f"coefficient {coefficient!r} is not identified: {reason}")


class InvalidNull(InputError):
    pass


class NotConverged(ConvergenceError):
    pass


# new mode
class ZeroCostCoefficient(InputError):
    pass


class NonpositiveVot(InputError):
    pass


class DegenerateBase(InputError):
    pass


class ReferenceModeUnavailable(InputError):
    pass


class MissingVot(InputError):
    pass


# scenario / io
class InvalidConfig(InputError):
    pass


class TripError(InputError):
    """Wraps an error raised while evaluating one trip."""

    def __init__(self, trip_id, cause):
        self.trip_id = trip_id
        self.cause = cause
        super().__init__(f"trip {trip_id!r}: {cause}")
