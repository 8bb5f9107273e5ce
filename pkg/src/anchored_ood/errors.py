class AnchoredOODError(Exception):
    """Base class for library errors."""


class ShapeError(AnchoredOODError, ValueError):
    """Array dimensions are inconsistent with the model or operation."""


class ConfigError(AnchoredOODError, ValueError):
    """Experiment configuration failed validation.

    ``key`` names the offending section or ``section.key``.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NumericalError(AnchoredOODError, RuntimeError):
    """A linear solve, eigensolve or domain check failed."""


class CheckpointError(AnchoredOODError, ValueError):
    """Checkpoint file is malformed or incompatible."""
