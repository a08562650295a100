"""Exception types raised by the solvers and the CLI."""


class MinimaxError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class RankDeficient(MinimaxError):
    pass


class SingularSystem(MinimaxError):
    exit_code = 3


class IntegrationFailure(MinimaxError):
    pass


class GridMismatch(MinimaxError):
    pass


class NegativeVariance(MinimaxError):
    pass


class InfeasibleU(MinimaxError):
    exit_code = 2


class SingularKKT(MinimaxError):
    exit_code = 3


class PointOnTarget(MinimaxError):
    pass


class ArityMismatch(MinimaxError):
    pass


class BlowUp(MinimaxError):
    pass


class CoefficientRoughness(MinimaxError):
    pass


class SingularCompletion(MinimaxError):
    exit_code = 3


class InjectivityFailure(MinimaxError):
    pass


class DegenerateDirection(MinimaxError):
    pass


class TooLarge(MinimaxError):
    pass


class ParseError(MinimaxError):
    exit_code = 4
