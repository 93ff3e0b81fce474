"""Exception types raised by the solvers and checks."""


class ExpanderLabError(Exception):
    """Base class for all package errors."""


class InvalidProfile(ExpanderLabError, ValueError):
    """A profile curve violates its sampling invariants."""


class AxisCollision(ExpanderLabError):
    """The generating curve reached the axis of rotation."""

    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


class Blowup(ExpanderLabError):
    """The tangent angle left the graphical envelope during integration."""

    def __init__(self, message, profile=None):
        super().__init__(message)
        self.profile = profile


class FitUnreliable(ExpanderLabError):
    """Not enough far-field samples to fit an asymptotic cone."""


class BracketError(ExpanderLabError):
    """A search bracket does not contain the requested feature."""


class FoldProximity(ExpanderLabError):
    """The requested cone slope is too close to the fold value."""

    def __init__(self, message, delta=None, delta_star=None, suggestions=()):
        super().__init__(message)
        self.delta = delta
        self.delta_star = delta_star
        self.suggestions = tuple(suggestions)


class OverflowGuard(ExpanderLabError):
    """The weighted mass matrix lost positive definiteness."""


class IndexIncomplete(ExpanderLabError):
    """A Fourier mode beyond the cutoff still has a non-positive eigenvalue."""


class TruncationTooSmall(ExpanderLabError):
    """An estimate cannot be achieved inside the truncated domain."""


class SingularityFlag(ExpanderLabError):
    """A discrete linear system that should be invertible is near-singular."""


class DivergentNorm(ExpanderLabError):
    """A weighted norm integrand grows in the far field."""


class PreconditionError(ExpanderLabError):
    """An operation's precondition does not hold."""


class StepTooLarge(ExpanderLabError):
    """Two profiles are not normal graphs over each other."""
