"""arcforge: synthesis, filtering, and evaluation of grid-puzzle tasks."""

__version__ = "0.1.0"
