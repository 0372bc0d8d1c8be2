"""Fully discrete adjoints for DIRK-integrated conservation laws on deforming domains."""

from .tableau import ButcherTableau, make_tableau, validate
from .system import InitialCondition, SemiDiscreteSystem, verify_derivatives
from .qoi import DiscreteFunctional, QoiSpec
from .store import FileStore, MemoryStore, Slot
from .primal import NewtonOptions, PrimalTrajectory, TimeGrid, integrate, solve_stage
from .adjoint import (DualTrajectory, Gradient, adjoint_sweep, forward_sensitivity,
                      gradient, lagrangian_residuals, reconstruct_gradient)

__version__ = "0.1.0"

__all__ = [
    "ButcherTableau", "make_tableau", "validate",
    "InitialCondition", "SemiDiscreteSystem", "verify_derivatives",
    "DiscreteFunctional", "QoiSpec",
    "FileStore", "MemoryStore", "Slot",
    "NewtonOptions", "PrimalTrajectory", "TimeGrid", "integrate", "solve_stage",
    "DualTrajectory", "Gradient", "adjoint_sweep", "forward_sensitivity", "gradient",
    "lagrangian_residuals", "reconstruct_gradient",
]
