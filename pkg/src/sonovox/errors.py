"""Exception hierarchy shared across the package."""


class SonovoxError(Exception):
    """Base class for all package errors."""


class ShapeError(SonovoxError):
    """Operand dimensions do not match the operation's contract."""


class GeometryError(SonovoxError):
    """A convolution/pooling geometry is infeasible (names the failing axis)."""


class ConfigError(SonovoxError):
    """Invalid layer, model, or training configuration."""


class FormatError(SonovoxError):
    """Malformed binary or text artifact.

    ``offset`` carries the byte position at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(SonovoxError):
    """A dataset or raw recording violates its invariants."""


class MetricError(SonovoxError):
    """A requested metric is undefined for the given data (e.g. zero variance)."""


class DivergenceError(SonovoxError):
    """Training produced a non-finite loss."""
