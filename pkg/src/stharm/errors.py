"""Exception hierarchy shared by all modules."""


class StharmError(Exception):
    """Base class for errors raised by this package."""


class DomainError(StharmError, ValueError):
    """A point or time lies outside the domain of an evaluator."""


class SingularPointError(DomainError):
    """Evaluation requested at a known singular point (e.g. the center of a distance function)."""


class GeometryError(StharmError):
    """A geometric object is degenerate (non positive definite metric, singular matrix)."""


class CapabilityError(StharmError):
    """The requested quantity is not available for this model (e.g. no analytic distance)."""


class NumericalError(StharmError):
    """Non-finite values appeared during integration."""


class StatisticsError(StharmError):
    """Not enough samples for a meaningful statistic."""


class ConfigError(StharmError, ValueError):
    """Invalid or inconsistent experiment configuration."""
