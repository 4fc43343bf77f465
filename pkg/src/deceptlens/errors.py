"""Exception types shared across the package."""


class DeceptLensError(Exception):
    pass


class ShapeError(DeceptLensError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(DeceptLensError, ValueError):
    """Input lies outside the domain where an operation is defined."""


class ConfigError(DeceptLensError, ValueError):
    """Invalid configuration or dataset setup."""


class ContractError(DeceptLensError, ValueError):
    """Caller violated an API precondition."""


class ParseError(DeceptLensError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownIdError(DeceptLensError, LookupError):
    """A requested document or record id does not exist."""
