"""Exception types raised across the package."""


class ExpStableError(Exception):
    """Base class for all package errors."""


class NonIntegrable(ExpStableError):
    pass


class ConfigurationOverflow(ExpStableError):
    """A configuration would exceed the atom cap."""


class UnboundedDecoration(ExpStableError):
    """Exact window sampling needs an almost-sure upper bound on the decoration."""


class WindowTooSmall(ExpStableError):
    pass


class DegenerateAlpha(ExpStableError):
    pass


class NullDecoration(ExpStableError):
    pass


class ParticleOverflow(ExpStableError):
    pass


class NonpositiveMartingale(ExpStableError):
    pass
