"""Exception types shared across the package."""


class PlateSupportError(Exception):
    """Base class for all package errors."""


class ConfigError(PlateSupportError):
    """Invalid configuration. Carries the full list of problems found."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class EmptyClampSetError(PlateSupportError):
    """The support set clamps no node, so the plate problem is not coercive."""


class NoConvergenceError(PlateSupportError):
    """An iterative solver ran out of iterations.

    Carries the best iterate and its residual so callers can inspect or
    accept the partial result.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class NoLegalMoveError(PlateSupportError):
    """The proposal kernel found no admissible move from the current set."""


class DegenerateComponentError(PlateSupportError):
    """A crack-mesh component has no cell to carry strain."""


class CenterNotOnKError(PlateSupportError):
    """An audit ball was centered off the support set."""


class BallNotInteriorError(PlateSupportError):
    """An interior-circle audit was requested for a ball leaving the domain."""


class CutoffTooWideError(PlateSupportError):
    """The gluing cutoff band does not fit inside the plate footprint."""
