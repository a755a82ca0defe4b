"""Exception hierarchy shared across the package."""

from __future__ import annotations


class InvisiTrackError(Exception):
    """Base class for domain errors (CLI exit status 1)."""


class BehindCamera(InvisiTrackError):
    pass


class OutOfBounds(InvisiTrackError):
    pass


class InsufficientViews(InvisiTrackError):
    pass


class DegenerateGeometry(InvisiTrackError):
    pass


class InvalidTemplate(InvisiTrackError):
    pass


class OffSurface(InvisiTrackError):
    pass


class InvalidBinding(InvisiTrackError):
    pass


class NotARotation(InvisiTrackError):
    pass


class NothingToFit(InvisiTrackError):
    pass


class NonConvergence(InvisiTrackError):
    """LM could not decrease the energy even at maximum damping.

    The best state reached so far is attached so callers can carry on.
    """

    def __init__(self, message, state=None, report=None):
        super().__init__(message)
        self.state = state
        self.report = report


class InvalidSigma(InvisiTrackError):
    pass


class InsufficientFrames(InvisiTrackError):
    pass


class UnknownMotion(InvisiTrackError):
    pass


class NoCommonMarkers(InvisiTrackError):
    pass


class TopologyMismatch(InvisiTrackError):
    pass
