"""Object geometry: SDF grids, analytic primitives and mesh baking."""
from .bake import BakeError, bake
from .grid import (DEFAULT_DIMS, DEFAULT_PADDING, GridFormatError, SdfGrid, grid_from_function,
                   load_grid, save_grid)
from .primitives import Box, Capsule, PrimitiveError, Sphere, analytic_primitive

__all__ = [
    "BakeError", "bake", "DEFAULT_DIMS", "DEFAULT_PADDING", "GridFormatError", "SdfGrid",
    "grid_from_function", "load_grid", "save_grid", "Box", "Capsule", "PrimitiveError", "Sphere",
    "analytic_primitive",
]
