"""Exception types raised across the package."""


class SmolkinError(Exception):
    pass


class ConfigurationError(SmolkinError, ValueError):
    pass


class UnsupportedDimensionError(SmolkinError, ValueError):
    pass


class DomainError(SmolkinError, ValueError):
    pass


class StepSizeError(SmolkinError, RuntimeError):
    """A time step is too coarse for the requested accuracy."""


class ResolutionError(SmolkinError, RuntimeError):
    """A discretization produced values outside their admissible range."""


class StiffnessError(SmolkinError, RuntimeError):
    pass


class InsufficientStatistics(SmolkinError):
    pass
