"""Exception hierarchy shared across the package."""


class FerdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FerdError):
    """Bad configuration: unknown key, invalid hyperparameter, unknown arch."""


class InputError(FerdError):
    """Invalid runtime input: shape mismatch, unnormalized probabilities, ..."""


class CheckpointError(FerdError):
    """Unreadable or inconsistent checkpoint file."""


class SchemaError(FerdError):
    """Report or history file violates its schema."""


class MigrationError(SchemaError):
    """Report file was written with an incompatible schema version."""


class DivergenceError(FerdError):
    """Training produced a non-finite loss."""
