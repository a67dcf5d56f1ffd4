"""Hybrid high-order discretization of generalized (power-law / Carreau-Yasuda) Stokes flow."""

from .mesh import Mesh, MeshError, build_mesh, generate, load_mesh, parse_mesh
from .rheology import FlowLaw, law_constants, verify_power_framed
from .solver import (
    Discretization,
    DiscreteProblem,
    DiscreteState,
    NewtonConfig,
    SolverError,
    newton_solve,
)
from .verification import ManufacturedCase, builtin_case, run_convergence

__all__ = [
    "Mesh",
    "MeshError",
    "build_mesh",
    "generate",
    "load_mesh",
    "parse_mesh",
    "FlowLaw",
    "law_constants",
    "verify_power_framed",
    "Discretization",
    "DiscreteProblem",
    "DiscreteState",
    "NewtonConfig",
    "SolverError",
    "newton_solve",
    "ManufacturedCase",
    "builtin_case",
    "run_convergence",
]
