"""Fully discrete projection method for 3D incompressible Navier-Stokes on lattice domains."""
from .errors import (ChorinError, ConfigError, DisconnectedSublattice, EmptyGrid, GridMismatch,
                     InvalidN, NotConverged, NumericalFailure, OutsideCoverage, SmallnessViolated,
                     SolverDivergence)
from .field import ScalarField, VectorField, inner, l2_norm, linf_norm
from .grid import DomainSpec, build_dirichlet_grid, build_grid, build_torus_grid
from .hodge import decompose, project
from .stepper import SimConfig, SimState, Stepper, run

__version__ = "0.1.0"

__all__ = [
    "ChorinError", "ConfigError", "DisconnectedSublattice", "EmptyGrid", "GridMismatch", "InvalidN",
    "NotConverged", "NumericalFailure", "OutsideCoverage", "SmallnessViolated", "SolverDivergence",
    "ScalarField", "VectorField", "inner", "l2_norm", "linf_norm",
    "DomainSpec", "build_dirichlet_grid", "build_grid", "build_torus_grid",
    "decompose", "project", "SimConfig", "SimState", "Stepper", "run",
]
