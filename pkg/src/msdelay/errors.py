"""Exception hierarchy.

Numerical failures share the :class:`NumericalFailure` base so that callers
(and the command line) can treat them uniformly.
"""

from __future__ import annotations


class MsdError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MsdError, ValueError):
    """Invalid model configuration or command-line input."""


class NumericalFailure(MsdError):
    """A numerical procedure could not complete."""


class StepFailure(NumericalFailure):
    """Adaptive step size underflowed."""


class NonFiniteState(NumericalFailure):
    """The integrated state left the finite range."""


class TangencyUnresolved(NumericalFailure):
    """Two event crossings lie closer together than the event time tolerance."""


class ZenoSuspected(NumericalFailure):
    """Too many transitions, or transitions accumulating in time."""


class GuardNotReached(NumericalFailure):
    """A flow did not reach the switching surface."""


class SectionNotReached(NumericalFailure):
    """A flow did not reach the Poincare section."""


class NoIntersection(NumericalFailure):
    """The free-mode flow never met the reference trajectory."""


class PreconditionViolated(NumericalFailure):
    """Inputs outside the region where the delayed map is defined."""


class CurveInvalid(MsdError):
    """The section curve fails transversality on its sampled range."""


class NoFeasiblePoint(MsdError):
    """Every candidate of a search failed."""


class RangeError(MsdError, ValueError):
    """Requested time window lies outside the trajectory span."""


class MismatchError(MsdError, ValueError):
    """Trajectories cannot be joined: endpoint states differ."""
