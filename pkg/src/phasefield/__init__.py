"""P1 finite element solvers for Allen-Cahn and Cahn-Hilliard gradient flows."""
from .errors import (
    ConfigurationError,
    DomainError,
    IndefiniteOperatorError,
    LineSearchError,
    MeshError,
    NonconvexStepError,
    PhaseFieldError,
    SolverError,
)
from .fem import FemSpace, assemble
from .mesh import Mesh, check_delaunay, generate_uniform

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DomainError", "IndefiniteOperatorError", "LineSearchError",
    "MeshError", "NonconvexStepError", "PhaseFieldError", "SolverError",
    "FemSpace", "assemble", "Mesh", "check_delaunay", "generate_uniform", "__version__",
]
