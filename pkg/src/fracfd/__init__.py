"""Fractional filtration equations: exponents, rearrangements, solvers and checks."""
from .exponents import (DomainError, ExponentSet, Nonlinearity, ProblemParams,
                        exponent_set, extinction_coefficients, kappa, tail_exponent)
from .rearrange import Field, Grid

__version__ = "0.1.0"

__all__ = [
    "DomainError", "ExponentSet", "Nonlinearity", "ProblemParams", "exponent_set",
    "extinction_coefficients", "kappa", "tail_exponent", "Field", "Grid",
]
