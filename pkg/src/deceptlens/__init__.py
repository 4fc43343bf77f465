"""Paired-statement deception detection with co-attention, on a small numpy autodiff engine."""
from .errors import ConfigError, ContractError, DeceptLensError, DomainError, ParseError, ShapeError, UnknownIdError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DeceptLensError",
    "DomainError",
    "ParseError",
    "ShapeError",
    "UnknownIdError",
    "__version__",
]
