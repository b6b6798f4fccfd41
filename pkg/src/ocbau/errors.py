"""Exception hierarchy shared across the package."""


class OcbaError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(OcbaError, ValueError):
    """Invalid instance, policy or experiment configuration."""


class DomainError(OcbaError, ValueError):
    """Argument outside the mathematical domain of a rate function."""


class SolverError(OcbaError, RuntimeError):
    """A root finder or bisection failed to converge or to bracket.

    ``report`` carries whatever diagnostics the solver had at the time.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = dict(report or {})


class EstimationError(OcbaError, ValueError):
    """Posterior quantity requested before enough data is available."""
