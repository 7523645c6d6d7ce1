"""Exception types shared across the package."""


class RefSsmError(Exception):
    """Base class for all package errors."""


class ConfigError(RefSsmError, ValueError):
    pass


class StabilityError(RefSsmError, ValueError):
    """A continuous-time eigenvalue has non-negative real part."""


class SingularityError(RefSsmError, ValueError):
    """A zero eigenvalue makes the ZOH input map undefined."""


class ShapeError(RefSsmError, ValueError):
    pass


class ContractError(RefSsmError, ValueError):
    """An input violates an operation's precondition (e.g. non-binary spikes)."""


class NumericHealthError(RefSsmError, FloatingPointError):
    """NaN or Inf detected in a loss, activation, or gradient."""

    def __init__(self, what: str, message: str | None = None):
        self.what = what
        super().__init__(message or f"non-finite values in {what}")


class IngestError(RefSsmError, IOError):
    """Dataset file missing, truncated or malformed."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class CorruptRecordError(IngestError):
    pass


class FormatError(IngestError):
    pass


class CheckpointError(RefSsmError, ValueError):
    """Checkpoint version or shape mismatch."""
