"""Exception hierarchy shared across the package."""


class RoaboundError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(RoaboundError):
    """Malformed expression text; carries the byte offset of the offending token."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class IntervalDivisionError(RoaboundError):
    """Division by an interval that straddles zero."""


class NonFiniteError(RoaboundError):
    """Evaluation produced a non-finite value (overflow or division by zero)."""


class SystemDefinitionError(RoaboundError):
    """A stochastic system violates a structural invariant (f(0)!=0, g not positive definite, ...)."""


class LinearAlgebraError(RoaboundError):
    """Matrix-level failure: non-Hurwitz A, singular vectorized system, P not positive definite."""


class VerificationError(RoaboundError):
    """A level search or certification stage could not produce a certified result.

    Carries the last verifier outcome (witness or inconclusive box) when available.
    """

    def __init__(self, message: str, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class ConfigError(RoaboundError):
    """Invalid or missing run configuration."""


class TrainingError(RoaboundError):
    """Training diverged; carries the last finite checkpoint if one exists."""

    def __init__(self, message: str, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
