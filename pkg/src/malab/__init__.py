"""Numerical laboratory for 2D linearized Monge-Ampere operators."""

from .domain import ConvexDomain, build_domain, check_quadratic_separation, check_uniform_interior_ball
from .grid import Grid, ScalarField, SymmetricMatrixField, VectorField, discretize

__all__ = [
    "ConvexDomain", "build_domain", "check_quadratic_separation",
    "check_uniform_interior_ball", "Grid", "ScalarField",
    "SymmetricMatrixField", "VectorField", "discretize",
]
__version__ = "0.1.0"
