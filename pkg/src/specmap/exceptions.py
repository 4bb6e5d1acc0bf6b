"""Exception hierarchy shared by the library and the CLI exit-code mapping."""

from __future__ import annotations


class SpecmapError(Exception):
    """Base class for every error raised by specmap."""


class ScenarioError(SpecmapError, ValueError):
    """Invalid or unparsable problem instance."""

    def __init__(self, message: str, field: str | None = None) -> None:
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class NumericalError(SpecmapError, ArithmeticError):
    """A numerical routine failed to produce a trustworthy answer."""


class PoleProximityError(NumericalError):
    def __init__(self, point: complex, pole: float) -> None:
        self.point = point
        self.pole = pole
        super().__init__(f"evaluation point {point!r} lies within the guard radius of eigenvalue {pole!r}")


class PreconditionError(SpecmapError, ValueError):
    """A request is vacuous or violates a documented precondition."""
