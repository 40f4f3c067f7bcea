class DeterraError(Exception):
    """Base class for every error raised on purpose by deterra."""


class ConfigError(DeterraError):
    """Invalid or missing configuration. The CLI exits with code 2."""


class DimensionError(DeterraError, ValueError):
    """Vector or matrix shapes do not fit together."""


class NumericalError(DeterraError):
    """NaN losses, singular components and similar numeric aborts."""


class ArtifactError(DeterraError):
    """A stored artifact is corrupt, has the wrong version, or was built for another env config."""


class InsufficientDataError(DeterraError):
    """Not enough samples to fit a model."""
