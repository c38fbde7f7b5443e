"""
Exception hierarchy shared by the separation services.
"""


class SeparationError(Exception):
    """Base class for all errors raised by tsbsmamba."""


class ShapeMismatchError(SeparationError, ValueError):
    """Tensor shapes disagree with each other or with the configuration."""


class NonFiniteError(SeparationError, ValueError):
    """A NaN or infinity appeared in an input or intermediate tensor."""

    def __init__(self, where: str, detail: str = ""):
        self.where = where
        message = f"non-finite values in {where}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class VerificationError(SeparationError):
    """A verification suite found a violated invariant."""

    def __init__(self, invariant: str, detail: str):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}")


class SilentReferenceError(SeparationError, ValueError):
    """SDR is undefined because the reference carries no energy."""
