"""Exception types shared across the package.

Plain ``ValueError`` is used for ordinary invalid-argument cases; the classes
here cover failure modes that callers need to tell apart.
"""


class StateError(RuntimeError):
    """An operation was called on an object in the wrong state
    (e.g. eval-mode batch norm before any statistics exist)."""


class ArchitectureMismatchError(ValueError):
    """Checkpoint or weight-averaging input does not match the expected
    architecture fingerprint."""


class CheckpointFormatError(ValueError):
    """Checkpoint file is truncated or malformed."""


class ConfigError(ValueError):
    """A run configuration failed validation. The message names the field."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss. The message names stage,
    epoch and batch."""


class ConstantInputError(ValueError):
    """Correlation requested for a constant vector, where it is undefined."""
