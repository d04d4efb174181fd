"""Finite-element workbench for effective interface conditions between a free
fluid and a porous medium separated by a curved interface.

The interface x2 = g(x1) is flattened by psi(z) = (z1, z2 + g(z1)); all
problems are solved in the flattened coordinates with the transformed
operators.
"""
from .config import WorkbenchConfig
from .errors import NumericalQualityError, ValidationError
from .forces import BodyForce
from .mesh import InclusionSpec
from .transform import CurveSpec

__all__ = ["BodyForce", "CurveSpec", "InclusionSpec", "NumericalQualityError", "ValidationError", "WorkbenchConfig"]
__version__ = "0.1.0"
