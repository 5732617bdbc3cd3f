"""Functional regression of daily health counts on temperature curves."""

from .basis import (
    Interval,
    SplineBasis,
    eval_basis,
    gram,
    make_equispaced_basis,
    penalty,
    windowed_grams,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DomainError,
    FunregError,
    RankDeficientError,
)

__version__ = "0.1.0"
