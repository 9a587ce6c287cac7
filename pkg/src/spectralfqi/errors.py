"""Exception types raised across the package."""


class SpectralFQIError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(SpectralFQIError, ValueError):
    pass


class DimensionError(SpectralFQIError, ValueError):
    pass


class BoundViolationError(SpectralFQIError, ValueError):
    pass


class RaggedTrajectoryError(SpectralFQIError, ValueError):
    pass


class InsufficientDataError(SpectralFQIError, ValueError):
    pass


class SymmetryError(SpectralFQIError, ValueError):
    pass


class RankDeficiencyError(SpectralFQIError, ValueError):
    """Raised when a requested number of components hits a vanishing eigenvalue.

    Lower ``kappa`` to a value whose eigenvalue is clearly positive.
    """


class DegenerateSpectrumError(SpectralFQIError, ValueError):
    pass


class ConfigurationError(SpectralFQIError, ValueError):
    pass


class CoverageError(SpectralFQIError, ValueError):
    pass


class DivergenceError(SpectralFQIError, ArithmeticError):
    """Training produced a non-finite loss; usually the learning rate is too high."""


class PairingError(SpectralFQIError, ValueError):
    pass
