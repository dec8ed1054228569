"""Multilevel collision-source dynamical low-rank solver for the 2D
continuous slowing-down transport equation."""

from csdlra.errors import ConfigError, CsdError, NumericalError, RunAborted

__version__ = "0.1.0"

__all__ = ["ConfigError", "CsdError", "NumericalError", "RunAborted", "__version__"]
