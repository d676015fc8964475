"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """Invalid configuration value or block setup."""


class UsageError(RuntimeError):
    """An API was called in a state it does not support."""


class NumericalError(ArithmeticError):
    """A non-finite value was produced or supplied."""
