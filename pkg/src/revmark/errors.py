"""Exception hierarchy.

Every failure the toolkit declares derives from :class:`RevmarkError`, so
callers (and the CLI) can tell a declared failure apart from a bug.
"""


class RevmarkError(Exception):
    """Base class for all declared failures."""

    @property
    def name(self) -> str:
        return type(self).__name__


class ShapeMismatch(RevmarkError, ValueError):
    pass


class DivisionByZero(RevmarkError, ArithmeticError):
    pass


class NonFiniteInput(RevmarkError, ValueError):
    pass


class NonScalarLoss(RevmarkError, ValueError):
    pass


class NumericOverflow(RevmarkError, ArithmeticError):
    pass


class InexactDivision(RevmarkError, ArithmeticError):
    """A lossless inverse hit a nonzero remainder: the input was modified."""


class LengthMismatch(RevmarkError, ValueError):
    pass


class BadParams(RevmarkError, ValueError):
    pass


class MissingCover(RevmarkError, ValueError):
    pass


class TruncatedStream(RevmarkError):
    pass


class ChecksumMismatch(RevmarkError):
    pass


class RangeExceeded(RevmarkError, ValueError):
    pass


class MalformedHeader(RevmarkError):
    pass


class CapacityExceeded(RevmarkError):
    def __init__(self, required: int, available: int):
        super().__init__(f"payload needs {required} bits, at most {available} available")
        self.required = required
        self.available = available


class InconsistentMap(RevmarkError, ValueError):
    pass


class CheckpointError(RevmarkError):
    pass
