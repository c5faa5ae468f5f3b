"""Exception types shared across the package."""


class AdapodError(Exception):
    """Base class for all errors raised by this package."""


class MeshError(AdapodError):
    """Invalid mesh operation (bad indices, incompatible forests, ...)."""


class SpaceError(AdapodError):
    """Invalid finite element space construction or usage."""


class SolverError(AdapodError):
    """A linear or nonlinear solve failed."""


class NewtonError(SolverError):
    """Newton iteration did not converge; carries the last residual norm."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConfigError(AdapodError):
    """Invalid configuration file or option value."""


class FormatError(AdapodError):
    """Malformed artifact file."""
