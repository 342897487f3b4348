"""Exception hierarchy shared across the toolkit.

ValidationError subclasses ValueError so call sites that expect plain
ValueError keep working; the CLI maps each class to a distinct exit code.
"""


class MsemgError(Exception):
    """Base class for toolkit errors."""


class ValidationError(MsemgError, ValueError):
    """Invalid parameters, shapes, or file contents."""


class ManifestError(ValidationError):
    """Dataset manifest is malformed or leaks subjects across splits."""


class CheckpointError(ValidationError):
    """Checkpoint bytes are corrupt or not a checkpoint at all."""


class NumericalError(MsemgError):
    """A computation produced non-finite values; message names the op."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite."""
