"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Inconsistent configuration or mismatched dimensions."""


class NumericsError(ArithmeticError):
    """A computation produced non-finite values."""


class FormatError(ValueError):
    """A serialized file is malformed or truncated."""
