"""Spectral workbench for a double convex-integration construction for the
incompressible Euler equations on the 2pi-periodic 3-torus.

The package is organized around periodic grid fields with dual
physical/spectral representation (`fields`), the operator toolkit
(`operators`), Mikado pipe-flow families (`mikado`), the parameter
schedule and its feasibility validator (`scheduler`), short-horizon
classical solves and flow maps (`dynamics`), temporal gluing (`gluing`),
the localized perturbation step (`perturbation`), and finite-stage
orchestration (`pipeline`).  All numerical claims are made against
computed budgets; asymptotic inequalities that cannot hold at desk scale
are reported, not asserted.
"""

from .fields import Grid3, ScalarField, VectorField, SymTensorField
from .operators import (
    derivative,
    leray_project,
    inverse_divergence,
    Mollifier,
    mollify,
    mollify_commutator,
    holder_norm,
    h_minus1_norm,
    oscillatory_integral,
)

__version__ = "0.1.0"

__all__ = [
    "Grid3",
    "ScalarField",
    "VectorField",
    "SymTensorField",
    "derivative",
    "leray_project",
    "inverse_divergence",
    "Mollifier",
    "mollify",
    "mollify_commutator",
    "holder_norm",
    "h_minus1_norm",
    "oscillatory_integral",
]
