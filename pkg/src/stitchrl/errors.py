"""Exception hierarchy shared across the package.

Each class carries an ``exit_code`` so the CLI can map failures to
distinct process exit statuses without a lookup table.
"""


class StitchError(Exception):
    exit_code = 1


class ConfigError(StitchError, ValueError):
    """Invalid configuration, bad shapes, or out-of-range hyperparameters."""

    exit_code = 4

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class DependencyError(StitchError):
    """A pipeline stage was invoked before the artifacts it needs exist."""

    exit_code = 3


class ArtifactExistsError(StitchError):
    exit_code = 5


class CorruptArtifactError(StitchError):
    """Truncated file, bad magic, unsupported version, or hash mismatch."""

    exit_code = 7


class NonFiniteError(StitchError, FloatingPointError):
    exit_code = 8


class TrainingFailure(StitchError):
    """A trainer exhausted its budget without meeting its success criterion."""

    exit_code = 6

    def __init__(self, message: str, log: object = None):
        super().__init__(message)
        self.log = log


class CollectionError(StitchError):
    """Boundary-data collection could not reach the transition interval."""

    exit_code = 6
