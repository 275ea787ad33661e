"""Saddle-point least-squares finite elements with multilevel preconditioning
for singularly perturbed reaction-diffusion problems on the unit square."""

from .mesh import MeshHierarchy, Mesh2D, Partition1D, build_hierarchy, shishkin_partition, uniform_partition
from .multilevel import (
    ConvergenceError,
    GammaSchedule,
    MultilevelContext,
    Preconditioner,
    SolveReport,
    gamma_schedule,
    make_preconditioner,
    pcg_standard,
)
from .problems import ManufacturedProblem, balanced_error, convergence_order, q_norm_error
from .spls import FluxPair, SPLSDiscretization, direct_solve, ucg_solve, upcg_solve

__all__ = [
    "ConvergenceError",
    "FluxPair",
    "GammaSchedule",
    "ManufacturedProblem",
    "Mesh2D",
    "MeshHierarchy",
    "MultilevelContext",
    "Partition1D",
    "Preconditioner",
    "SPLSDiscretization",
    "SolveReport",
    "balanced_error",
    "build_hierarchy",
    "convergence_order",
    "direct_solve",
    "gamma_schedule",
    "make_preconditioner",
    "pcg_standard",
    "q_norm_error",
    "shishkin_partition",
    "ucg_solve",
    "uniform_partition",
    "upcg_solve",
]
