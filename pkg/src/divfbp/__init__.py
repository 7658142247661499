"""Dividend payout under drift uncertainty, solved as a two-dimensional free-boundary problem."""
from .params import CaseTag, ModelParams, validate
from .full_info import solve_full_info
from .fbp import Grid2D, SolverConfig, solve_value_surface
from .boundary import FreeBoundary, boundary_from_surface
from .mc import McConfig
from .dividend import assemble_V

__all__ = ["CaseTag", "ModelParams", "validate", "solve_full_info", "Grid2D", "SolverConfig",
           "solve_value_surface", "FreeBoundary", "boundary_from_surface", "McConfig", "assemble_V"]
__version__ = "0.1.0"
