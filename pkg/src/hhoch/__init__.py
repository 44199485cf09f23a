"""Hybrid High-Order discretization of the mixed Cahn-Hilliard problem on polygonal meshes."""

__version__ = "0.1.0"

from .cahn_hilliard import (  # noqa: E402
    CahnHilliardSolver,
    InitialCondition,
    NewtonOptions,
    ProblemConfig,
    SimulationState,
    run_simulation,
)
from .hho import HHOSpace  # noqa: E402
from .mesh import PolyMesh, build_mesh, generate_cartesian, generate_hexagonal, generate_triangular, load_mesh  # noqa: E402

__all__ = [
    "CahnHilliardSolver",
    "HHOSpace",
    "InitialCondition",
    "NewtonOptions",
    "PolyMesh",
    "ProblemConfig",
    "SimulationState",
    "build_mesh",
    "generate_cartesian",
    "generate_hexagonal",
    "generate_triangular",
    "load_mesh",
    "run_simulation",
]
