"""Exception types raised across the pipeline.

Each error carries a CLI exit code so the command-line frontend can map
failures without inspecting messages.
"""

from __future__ import annotations


class RSLFError(Exception):
    exit_code = 1


class ValidationError(RSLFError, ValueError):
    """Malformed input: bad schema, missing file, inconsistent arguments."""

    exit_code = 2


class DepthDegenerate(RSLFError, ArithmeticError):
    """The homogeneous depth scale of a projection vanished."""

    exit_code = 4


class ReductionUndefined(RSLFError, ValueError):
    exit_code = 2


class EmptyObservations(RSLFError):
    exit_code = 2


class AllPointsSkipped(RSLFError):
    """No point had two or more observations on a common viewpoint row."""

    exit_code = 2


class NotObservable(RSLFError):
    exit_code = 3


class NonFinite(RSLFError, ArithmeticError):
    """A solver parameter or the cost became NaN/inf."""

    exit_code = 4

    def __init__(self, message: str, iteration: int):
        super().__init__(message)
        self.iteration = iteration


class NoMatches(RSLFError):
    exit_code = 2


class ZeroGroundTruthDepth(RSLFError, ZeroDivisionError):
    exit_code = 2
