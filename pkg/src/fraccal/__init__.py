"""Nonlocal Schrodinger inverse problems with quasilocal perturbations on a periodic grid."""
from .torus import Field, GridSpec, frac_laplacian, sobolev_norm
from .geometry import RegionMask, chain_counts
from .kernels import Kernel
from .solver import DirichletProblem, solve_dirichlet

__all__ = [
    "DirichletProblem",
    "Field",
    "GridSpec",
    "Kernel",
    "RegionMask",
    "chain_counts",
    "frac_laplacian",
    "sobolev_norm",
    "solve_dirichlet",
]
