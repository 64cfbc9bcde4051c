"""Pseudo-spectral free-surface Navier-Stokes solver in flattened coordinates."""
from .fields import Grid
from .errors import *  # noqa: F401,F403

__version__ = "0.1.0"
