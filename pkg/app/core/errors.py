class AplaError(Exception):
    """Base class for every error raised by the APLA pipeline."""


class DimensionError(AplaError, ValueError):
    """Shapes or extents that do not fit together."""


class ContractError(AplaError, ValueError):
    """A documented precondition was violated (range, scalar-ness, ids)."""


class GraphStateError(AplaError, RuntimeError):
    """The compute graph was used in a state it does not allow."""


class ConfigError(AplaError, ValueError):
    """Invalid configuration value, key or file."""


class FormatError(AplaError, ValueError):
    """A file or log did not match its expected on-disk format."""


class NumericalError(AplaError, ArithmeticError):
    """A non-finite value appeared where only finite values are allowed."""

    def __init__(self, message: str, record: dict | None = None):
        super().__init__(message)
        # Diagnostic step record (trainer) or op name (tensor core).
        self.record = record or {}
