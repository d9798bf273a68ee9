"""DG/BDF2 solver for 1D Maxwell's equations in a Cole-Cole medium.

The fractional polarization law is replaced by a finite sum of auxiliary
relaxation variables whose weights and abscissae come from a positivity
constrained fit (:mod:`colecole.quadopt`).
"""

from colecole.material import MaterialParams, caputo_power, kernel_density
from colecole.quadopt import (
    DiffusiveQuadrature,
    FrequencyBand,
    gauss_jacobi_init,
    optimize_quadrature,
)
from colecole.dgcore import DgField, DgOperators, Mesh1D, assemble_operators
from colecole.stepper import SimState, SimulationConfig, run_simulation
from colecole.oracle import run_direct_simulation

__all__ = [
    "MaterialParams",
    "caputo_power",
    "kernel_density",
    "DiffusiveQuadrature",
    "FrequencyBand",
    "gauss_jacobi_init",
    "optimize_quadrature",
    "DgField",
    "DgOperators",
    "Mesh1D",
    "assemble_operators",
    "SimState",
    "SimulationConfig",
    "run_simulation",
    "run_direct_simulation",
]

__version__ = "0.1.0"
