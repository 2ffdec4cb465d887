"""Exception hierarchy shared by the numerical modules and the CLI."""


class WpflowError(Exception):
    """Base class for all errors raised by wpflow."""


class ModelError(WpflowError, ValueError):
    """Invalid energy-model parameters."""


class OutOfRangeError(WpflowError, ValueError):
    """A value lies outside the range of an inverted monotone function."""


class DegenerateConfigurationError(WpflowError, ValueError):
    """Particles coincide, are unsorted, or violate the domain."""


class LambdaError(WpflowError, ValueError):
    """Selection weights inconsistent with the tie structure of a configuration."""


class StiffnessError(WpflowError, RuntimeError):
    """The explicit stepper could not find an admissible step size.

    The offending positions are kept on ``positions`` for post-mortem dumps.
    """

    def __init__(self, message, positions=None, dt=None):
        super().__init__(message)
        self.positions = positions
        self.dt = dt


class ToleranceNotMetError(WpflowError, RuntimeError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class StabilityError(WpflowError, RuntimeError):
    """The finite-volume update produced a negative cell value."""


class CertificateError(WpflowError, ValueError):
    """A density is not in the smooth set required by the construction."""


class QuadratureError(WpflowError, RuntimeError):
    """Composite quadrature failed to converge."""


class ConfigError(WpflowError, ValueError):
    """Malformed or inconsistent run configuration."""
