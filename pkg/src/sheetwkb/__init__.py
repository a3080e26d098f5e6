"""Weakly nonlinear surface waves on a stable incompressible MHD current-vortex sheet."""
from . import amplitude, combinatorics, fast_solver, mhd_algebra, wkb
from .errors import SheetWKBError

__version__ = "0.1.0"
__all__ = ["amplitude", "combinatorics", "fast_solver", "mhd_algebra", "wkb", "SheetWKBError"]
