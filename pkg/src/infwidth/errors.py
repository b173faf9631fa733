"""Exception types shared across the package."""


class ProgramError(Exception):
    """Base class for program construction and validation failures."""


class DuplicateSymbol(ProgramError):
    pass


class UndeclaredSymbol(ProgramError):
    pass


class UnknownSymbol(ProgramError):
    pass


class ArityMismatch(ProgramError):
    pass


class DimClassConflict(ProgramError):
    pass


class ShapeMismatch(Exception):
    """Word factors or probes do not compose."""


class CapExceeded(Exception):
    """A dense/eigen path was requested above the configured size cap."""


class MemoryPolicyError(Exception):
    """Instantiation would allocate more than the configured element cap."""


class NonPSDExtension(Exception):
    """A covariance extension is too far from positive semidefinite to repair."""


class NonInvertibleSeries(Exception):
    """Series has no compositional inverse (or a moment sequence has m1 = 0)."""


class NotAlternating(Exception):
    """Adjacent factors of an alternating word come from the same collection."""


class ParseError(Exception):
    """DSL syntax error with source location."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class TruncationWarning(UserWarning):
    """A truncated expansion's last kept term is not negligible."""
