"""Occupation-measure linear programs for stationary singular stochastic control."""
from ._backend import BACKEND
from .grid import ControlGrid, Grid, make_control_grid, make_uniform_grid
from .model import Case, Domain, ProblemSpec, builtin_model, validate_spec
from .generator import assemble
from .lp import LinearProgram, LPStatus, solve_lp
from .solver import solve_stationary
from .mfg import find_equilibrium, best_response, equilibrium_residual
from .sim import Barrier, NoControl, barrier_policy_value, simulate_stationary

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "Barrier", "Case", "ControlGrid", "Domain", "Grid", "LPStatus", "LinearProgram",
    "NoControl", "ProblemSpec", "assemble", "barrier_policy_value", "best_response",
    "builtin_model", "equilibrium_residual", "find_equilibrium", "make_control_grid",
    "make_uniform_grid", "simulate_stationary", "solve_lp", "solve_stationary", "validate_spec",
]
