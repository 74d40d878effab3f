"""Exception types shared across the package."""


class PriorFitError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(PriorFitError, ValueError):
    """Invalid configuration (bad STFT setup, incompatible shapes in configs, unknown keys)."""


class ShapeError(PriorFitError, ValueError):
    """Runtime tensor/waveform shape mismatch."""


class FormatError(PriorFitError, ValueError):
    """Malformed serialized container (feature or checkpoint file).

    `offset` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DomainError(PriorFitError, ValueError):
    """Input values outside a function's mathematical domain."""


class TrainingError(PriorFitError, RuntimeError):
    """Training aborted (non-finite loss, invalid state)."""
