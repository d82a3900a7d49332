"""Discretized sparse L0 optimal control of semilinear elliptic equations.

Modules: ``problem`` (grid, data, config), ``pde`` (state, linearized and
adjoint solves), ``pointwise`` (scalar cost, Hamiltonian, convex envelope,
prox maps), ``functionals`` (reduced objectives and derivatives),
``optimality`` (first-order checks and cones), ``soc`` (second-order
checks), ``solver`` (proximal solvers and sweeps), ``oracles`` (brute-force
references) and ``cli``.
"""

from .problem import ConfigError, Grid, Nonlinearity, Objective, ProblemSpec, build_problem, load_config
from .pointwise import CostParams
from .functionals import evaluate
from .solver import SolverSettings, solve, solve_l0, solve_pc

__all__ = [
    "ConfigError",
    "CostParams",
    "Grid",
    "Nonlinearity",
    "Objective",
    "ProblemSpec",
    "SolverSettings",
    "build_problem",
    "evaluate",
    "load_config",
    "solve",
    "solve_l0",
    "solve_pc",
]
