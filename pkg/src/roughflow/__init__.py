"""Rough differential equations driven by fractional Brownian motion on uniform grids.

Modules
-------
grid_path    uniform time grids, sampled paths, Hölder seminorms
fbm          exact fBm sampling with per-path seeded streams
rough_lift   second-level lifts, Chen relation, geometric and Itô flavours
controlled   controlled paths, rough integrals, sewing estimates
rde          Euler/Davie and Picard solvers, solution lifts, rough Itô formula
transform    the diffeomorphism reducing the diffusion to the identity
flow         one-dimensional Brownian flows, derivative identity, uniqueness
checks       the acceptance manifest shared by tests and ``roughflow verify-all``
cli          configuration, scenarios and the command-line entry point
"""

__version__ = "0.1.0"

from .fbm import FbmParams, brownian_path, sample_array, sample_paths
from .fields import Drift, VectorField, make_drift, make_sigma
from .grid_path import GridPath, TimeGrid, holder_norm
from .rde import RdeProblem, RdeSolution, solve, solve_euler, solve_picard
from .rough_lift import RoughPath, lift_ito_from_geometric, lift_piecewise_linear

__all__ = [
    "__version__",
    "TimeGrid", "GridPath", "holder_norm",
    "FbmParams", "sample_array", "sample_paths", "brownian_path",
    "RoughPath", "lift_piecewise_linear", "lift_ito_from_geometric",
    "Drift", "VectorField", "make_drift", "make_sigma",
    "RdeProblem", "RdeSolution", "solve", "solve_euler", "solve_picard",
]
