"""Exception hierarchy shared by all simulator modules."""


class PCMError(Exception):
    """Base class for simulator errors."""


class InputDomainError(PCMError, ValueError):
    """An argument is outside the domain of a material law or operation."""


class GeometryError(PCMError, ValueError):
    """Device geometry is invalid or cannot be resolved on the grid."""


class ConfigError(PCMError, ValueError):
    """Run configuration is malformed or violates an invariant."""


class SolverError(PCMError, RuntimeError):
    """A linear or nonlinear solve failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message if residual is None else f"{message} (residual={residual:.3e})")
        self.residual = residual


class CouplingError(SolverError):
    """Device/circuit co-simulation did not converge."""
