"""Reference-based super-resolution with deformable attention, on a numpy autodiff core."""
from .errors import ConfigError, NumericalError, ShapeError, UsageError

__version__ = "0.1.0"

__all__ = ["ConfigError", "NumericalError", "ShapeError", "UsageError", "__version__"]
