"""Exception hierarchy shared by every module."""


class BosonLabError(Exception):
    """Base class for all errors raised by bosonlab."""


class DimensionTooLow(BosonLabError, ValueError):
    """Spatial dimension d <= 2; the condensed phase only exists for d > 2."""


class BadResolution(BosonLabError, ValueError):
    """Cells per side must be even and at least 4."""


class BadFugacity(BosonLabError, ValueError):
    """Fugacity outside the open interval (0, 1)."""


class NegativeWeight(BosonLabError, ValueError):
    pass


class BadTestFunction(BosonLabError, ValueError):
    """Test function is negative, non-finite, or touches the periodic seam."""


class EigenFailure(BosonLabError, RuntimeError):
    pass


class DeterminantSingular(BosonLabError, ArithmeticError):
    pass


class BadShift(BosonLabError, ValueError):
    pass


class BadIntensity(BosonLabError, ValueError):
    pass


class NotCondensed(BosonLabError, ValueError):
    """Requested BEC density does not exceed the grid critical density."""


class NoSamples(BosonLabError, ValueError):
    pass


class UnderResolved(BosonLabError, ValueError):
    """Thermal length sqrt(beta)/kappa is below the grid spacing."""


class ConfigError(BosonLabError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path
        self.message = message
