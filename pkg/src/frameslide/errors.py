"""Exception types shared across the package."""


class FrameslideError(Exception):
    """Base class for all package errors."""


class ConfigError(FrameslideError, ValueError):
    """Invalid configuration or parameter value."""


class ShapeError(FrameslideError, ValueError):
    """Array shapes do not agree."""


class StepRangeError(FrameslideError, IndexError):
    """Diffusion step index outside the valid range."""


class NumericalError(FrameslideError, ArithmeticError):
    """A linear system was too ill-conditioned to solve reliably."""
