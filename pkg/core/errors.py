"""Errors raised by the verification toolkit.

All of them carry a message, an optional payload and an HTTP status code so the API blueprint can serialize them
as-is, and the CLI can map `InvariantViolation` to exit code 2.
"""
from typing import Any
from typing import Dict
from typing import Optional


class Error(Exception):
    """HTTP-friendly base error, with a status code, a message and an optional payload."""

    status_code = 400

    def __init__(
        self,
        message: str,
        status_code: Optional[int] = None,
        payload: Optional[Dict[str, Any]] = None,
    ) -> None:
        Exception.__init__(self, message)
        self.message = message
        if status_code is not None:
            self.status_code = status_code
        self.payload = payload

    def to_dict(self) -> Dict[str, Any]:
        rv = dict(self.payload or ())
        rv["message"] = self.message
        return rv

    def __repr__(self) -> str:
        return (
            f"{self.__class__.__qualname__}({self.message!r}, payload={self.payload!r}, "
            f"status_code={self.status_code})"
        )

    def __str__(self) -> str:
        return self.__repr__()


class DimensionError(Error):
    """Raised when a vector does not match the layer it is fed to."""


class ShapeMismatchError(Error):
    """Raised when a mask, residual or matrix does not match the network shapes."""


class MarginUndefinedError(Error):
    """Raised when the logit margin is asked for a single logit."""


class BreakpointCoverageError(Error):
    """Raised when a pre-activation interval escapes the outermost breakpoints."""


class DegenerateSegmentError(Error):
    """Raised when a segment table is requested for a zero-width interval."""


class UnsupportedActivationError(Error):
    """Raised when an encoding does not support the activation kind."""


class EncodingError(Error):
    """Raised for invalid encoding requests (bad target pair, missing bounds, bad penalty...)."""


class SolverError(Error):
    """Raised when a solver cannot handle the instance (size caps, invalid config...)."""


class LpNumericalError(SolverError):
    """Raised when the simplex cannot produce a verified answer, even with Bland's rule."""

    status_code = 500


class DatasetError(Error):
    """Raised on malformed dataset input."""


class TrainingDivergedError(Error):
    """Raised when the fixture trainer produces a NaN loss."""


class InvariantViolation(Error):
    """An internal invariant does not hold, this is always a bug."""

    status_code = 500
