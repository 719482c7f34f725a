"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or unknown option name."""


class NonFiniteError(ValueError):
    """A scene parameter or gradient is NaN or infinite."""


class DivergenceError(RuntimeError):
    """Optimization loss stayed far above its initial value."""


class SelectionError(RuntimeError):
    """No candidate left to select."""
