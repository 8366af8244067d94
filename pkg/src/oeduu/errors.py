"""Exception types shared across the package."""


class InvalidParameterError(ValueError):
    """A model parameter is non-finite or outside its admissible range."""


class DimensionError(ValueError):
    """An array does not have the size the operator expects."""


class OutOfDomainError(ValueError):
    """A point lies outside the rectangular domain."""


class NumericalError(RuntimeError):
    """A factorization or solve failed."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
