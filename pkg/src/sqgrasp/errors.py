"""Exception types shared across the package."""


class SqGraspError(Exception):
    """Base class for all package errors."""


class DomainError(SqGraspError, ValueError):
    """Non-finite or otherwise out-of-domain numeric input."""


class ParameterError(SqGraspError, ValueError):
    """An argument violates an operation's precondition."""


class SingularityError(SqGraspError, ValueError):
    """Evaluation at a point where the quantity is undefined (cusp, corner)."""


class PCDParseError(SqGraspError, ValueError):
    """Malformed PCD file. ``lineno`` is 1-based, or None for whole-file problems."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class DegenerateHullError(SqGraspError, ValueError):
    """Convex hull requested for collinear or coincident points."""


class NoPlaneError(SqGraspError, RuntimeError):
    """No plane with enough inliers was found."""


class SceneSpecError(SqGraspError, ValueError):
    """Invalid synthetic scene description (e.g. overlapping objects)."""
