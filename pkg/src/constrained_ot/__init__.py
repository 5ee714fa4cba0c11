"""Density-constrained dynamic optimal transport toolkit."""

__version__ = "0.1.0"

from .gflow import FreeEnergySpec, jko_step, pme_step, teorell_step  # noqa: E402
from .grid import CapField, DensityField, Grid, InterfaceFlux, MomentumField  # noqa: E402
from .homog import FhomTable, f_hom_eval, solve_homogenized_1d, water_fill_1d  # noqa: E402
from .kinetic import HALF, WHOLE, action_density, prox_action  # noqa: E402
from .membrane import MembraneProblem, solve_membrane_limit  # noqa: E402
from .solver import InfeasibleError, Solution, SolverConfig, dual_objective, solve_constrained  # noqa: E402

__all__ = [
    "CapField",
    "DensityField",
    "FhomTable",
    "FreeEnergySpec",
    "Grid",
    "HALF",
    "InfeasibleError",
    "InterfaceFlux",
    "MembraneProblem",
    "MomentumField",
    "Solution",
    "SolverConfig",
    "WHOLE",
    "action_density",
    "dual_objective",
    "f_hom_eval",
    "jko_step",
    "pme_step",
    "prox_action",
    "solve_constrained",
    "solve_homogenized_1d",
    "solve_membrane_limit",
    "teorell_step",
    "water_fill_1d",
]
