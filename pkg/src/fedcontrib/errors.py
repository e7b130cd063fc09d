"""Exception types shared across the package."""


class FedContribError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(FedContribError, ValueError):
    """Vectors or models with incompatible dimensions were combined."""


class ZeroNormVector(FedContribError, ValueError):
    """A cosine-based operation received a zero-norm vector.

    There is no meaningful angle for a zero update, so callers must decide
    on a fallback explicitly instead of silently receiving 0.
    """


class SingularCurvature(FedContribError, RuntimeError):
    """The quasi-Newton block system is singular or badly conditioned."""


class InfeasiblePartition(FedContribError, ValueError):
    """A data partition request cannot be satisfied (e.g. empty client)."""


class TrainingDiverged(FedContribError, RuntimeError):
    """Local training produced non-finite parameters."""


class ConfigError(FedContribError, ValueError):
    """An experiment configuration file or value is invalid."""
