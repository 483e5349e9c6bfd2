"""Exception types shared across the package."""


class BlockspanError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(BlockspanError):
    """A configuration value is outside its legal range."""


class InvalidInstructionError(BlockspanError):
    """An instruction addresses a body or bin that cannot be acted on."""


class DimensionError(BlockspanError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(BlockspanError):
    """A query point lies outside the region where the operation is defined."""


class UsageError(BlockspanError):
    """An API was called in a way its contract forbids."""


class CheckpointError(BlockspanError):
    """A checkpoint, replay, or snapshot file failed to load."""


class TrainingDiverged(BlockspanError):
    """A non-finite loss was encountered; carries a diagnostic dump path."""

    def __init__(self, message, dump_path=None):
        super().__init__(message)
        self.dump_path = dump_path
