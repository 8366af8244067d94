"""A-optimal sensor placement under irreducible model uncertainty.

Linear Bayesian inversion of an initial contaminant concentration in an
advection-diffusion model whose velocity field and release time are random.
"""

from .errors import (
    ConfigError,
    DimensionError,
    InvalidParameterError,
    NumericalError,
    OutOfDomainError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "InvalidParameterError",
    "NumericalError",
    "OutOfDomainError",
    "__version__",
]
