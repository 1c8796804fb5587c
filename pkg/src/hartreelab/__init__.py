"""Numerical laboratory for the radial energy-critical generalized Hartree equation.

Ground-state identities, Riesz-potential convolution, linearized spectral
theory, special threshold solutions, and time evolution with virial and
modulation diagnostics, at desk scale.
"""

from .model import ModelParams, derive_params, groundstate, sharp_constant
from .grid import RadialField, RadialGrid, build_grid, default_preset
from .riesz import RieszKernel, assemble_kernel

__all__ = [
    "ModelParams", "derive_params", "groundstate", "sharp_constant",
    "RadialField", "RadialGrid", "build_grid", "default_preset",
    "RieszKernel", "assemble_kernel",
]

__version__ = "0.1.0"
