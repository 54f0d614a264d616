"""Rover navigation simulator with local-to-global costmap fusion."""

from .terrain import C_MAX

__version__ = "0.1.0"
__all__ = ["C_MAX", "__version__"]
