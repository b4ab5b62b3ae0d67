"""Numerical laboratory for determining functionals of 2D Navier-Stokes flow."""

from .errors import *  # noqa: F401,F403
from .geometry import DiscreteDomain, build_rectangle  # noqa: F401

__version__ = "0.1.0"
