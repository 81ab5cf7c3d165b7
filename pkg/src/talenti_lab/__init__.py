"""Symmetrization, model-space Poisson solvers and Talenti-type comparisons on sphere domains."""

__version__ = "0.1.0"

from .model_space import ModelParams, eval_H, eval_h, inv_H, iso_profile, model_constants
from .rearrangement import (
    StepFunction,
    WeightedFunction,
    decreasing_rearrangement,
    distribution_function,
    schwarz_symmetrize,
)
from .model_solver import (
    model_first_eigenvalue,
    solve_model_poisson,
    sobolev_c1,
    sobolev_c2,
    torsional_rigidity_model,
)
from .mesh import DomainSpec, SurfaceMesh, cap_domain, generate_icosphere, two_cap_domain
from .fem import CoefficientField, first_eigen, solve_poisson
from .comparison import ComparisonReport, talenti_check

__all__ = [
    "ModelParams", "eval_H", "eval_h", "inv_H", "iso_profile", "model_constants",
    "StepFunction", "WeightedFunction", "decreasing_rearrangement", "distribution_function",
    "schwarz_symmetrize", "model_first_eigenvalue", "solve_model_poisson", "sobolev_c1",
    "sobolev_c2", "torsional_rigidity_model", "DomainSpec", "SurfaceMesh", "cap_domain",
    "generate_icosphere", "two_cap_domain", "CoefficientField", "first_eigen", "solve_poisson",
    "ComparisonReport", "talenti_check",
]
