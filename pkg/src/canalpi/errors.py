"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or malformed config document."""


class DomainError(ValueError):
    """Argument outside the operation's admissible domain."""


class RegimeError(RuntimeError):
    """The flow left the subcritical (fluvial) regime or violated the height cap."""

    def __init__(self, message, x=None, t=None):
        super().__init__(message)
        self.x = x
        self.t = t


class BoundarySolveError(RuntimeError):
    """The scalar boundary solve failed to converge."""


class CFLError(ValueError):
    """Requested time step violates the CFL bound."""


class CertificateInfeasibleError(RuntimeError):
    """The stability certificate cannot be constructed for the given data."""
