"""
Every error raised on purpose by this library derives from `ReluZonoError`.

Each class carries a `kind`, which is simply its class name. The command line
surface reports failures as `{"error": kind, "detail": text}`, so the names
here are part of the public interface and should not be renamed lightly.

Errors are grouped by the module that raises them, but they all live here so
that callers can catch them without importing solver internals.
"""


class ReluZonoError(Exception):
    """Base class for all domain errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


class InvalidParameter(ReluZonoError):
    """A value failed validation (shapes, ranges, non-finite entries)."""


class SchemaMismatch(ReluZonoError):
    """A JSON document does not carry the expected schema tag or fields."""


class ComplexityRefused(ReluZonoError):
    """The requested work exceeds a configured cap (see `reluzono.config`)."""


# data_model ######################


class InvalidDeltas(ReluZonoError):
    """Noise bounds for the general-position set-cover variant are out of order."""


# ingest ##########################


class BadMagic(ReluZonoError):
    """IDX header does not start with two zero bytes or its rank is zero."""


class TruncatedPayload(ReluZonoError):
    """IDX payload is shorter than the product of its dimensions."""


class UnsupportedElementType(ReluZonoError):
    """IDX element type code is not one of the standard codes."""


class NotEnoughExamples(ReluZonoError):
    """Fewer examples matched the requested classes than were asked for."""


# solvers #########################


class SolverStall(ReluZonoError):
    """
    A solver hit an iteration cap or returned a point outside its feasible set.

    Signals numerical trouble, not infeasibility.
    """


class Infeasible(ReluZonoError):
    """A program that should be feasible is not (usually an upstream bug)."""


class Unbounded(ReluZonoError):
    """A linear program has no finite optimum."""


# network #########################


class LabelsNotBinary(ReluZonoError):
    """Accuracy was requested on labels outside {0, 1}."""


class DivergenceDetected(ReluZonoError):
    """Gradient descent produced a loss above the divergence threshold."""


# chunked fit #####################


class NotGeneralPosition(ReluZonoError):
    """A chunk of examples is affinely dependent, so it cannot be interpolated."""


class BoundaryTie(ReluZonoError):
    """Two examples on a chunk boundary share the sorting coordinate."""
