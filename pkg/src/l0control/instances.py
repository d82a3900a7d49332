"""Reference problem instances used by the tests, the CLI and the examples.

Besides plain configurations this module builds problems with a prescribed
stationary point: given a control ``u`` and a desired adjoint ``phi``, the
target ``y_d = y_u - (A + a'(y_u)) phi`` makes ``phi`` the adjoint at ``u``.
"""

import numpy as np

from . import pde
from .problem import Grid, Nonlinearity, Objective, ProblemSpec, build_problem


def standard_config(dim=1):
    """Cubic state equation, bump target, interior-kink cost.

    The solution has a zero region, nodes on the quadratic branch strictly
    between the kink and the bound, and bang nodes.
    """
    if dim == 1:
        return {
            "dim": 1,
            "nodes": 257,
            "nonlinearity": "cubic",
            "c0": 1.0,
            "c3": 1.0,
            "target": "3*exp(-20*(x-0.5)**2)",
            "alpha": 0.01,
            "beta": 0.02,
            "gamma": 10.0,
        }
    return {
        "dim": 2,
        "nodes": 33,
        "nonlinearity": "cubic",
        "c0": 1.0,
        "c3": 1.0,
        "target": "3*exp(-20*((x-0.5)**2+(y-0.5)**2))",
        "alpha": 0.01,
        "beta": 0.02,
        "gamma": 10.0,
    }


def standard_problem(dim=1, **overrides):
    config = standard_config(dim)
    config.update(overrides)
    return build_problem(config)


def linear_quadratic_config(dim=2):
    """Linear state equation with the same cost structure as the standard problem."""
    config = standard_config(dim)
    config.update(nonlinearity="linear", c0=1.0, c3=0.0)
    return config


def linear_quadratic_problem(dim=2, **overrides):
    config = linear_quadratic_config(dim)
    config.update(overrides)
    return build_problem(config)


def with_prescribed_adjoint(spec, u, phi):
    """Copy of ``spec`` whose target makes ``phi`` the adjoint state at ``u``."""
    u = np.asarray(u, dtype=float)
    phi = np.asarray(phi, dtype=float)
    y = pde.solve_state(spec, u)
    target = y - pde.jacobian(spec, y) @ phi
    return spec.replace(objective=Objective(target))


def _grid_spec(interior, nonlinearity, c0, alpha, beta, gamma, c3=0.0):
    grid = Grid.unit(1, interior)
    n = grid.size
    return ProblemSpec(
        grid=grid,
        kappa=1.0,
        nonlinearity=Nonlinearity(nonlinearity, np.full(n, c0), np.full(n, c3)),
        objective=Objective(np.zeros(n)),
        alpha=alpha,
        beta=beta,
        gamma=gamma,
    )


def concave_stationary_instance(interior=63, depth=100.0):
    """A PMP point that violates the second-order necessary condition.

    The nonlinearity is ``arctan``.  On most nodes the control sits at the
    upper bound with a strongly negative adjoint, so the Hessian weight
    ``1 - phi a''(y)`` is large and negative there.  A middle band carries
    controls strictly inside ``(s, gamma)`` with ``phi = -alpha u``; these
    directions form the critical cone.  A thin zero band near the boundary
    has ``phi = 0``.  Returns ``(spec, u, phi)``.
    """
    alpha, beta, gamma = 0.01, 0.001, 1.0
    base = _grid_spec(interior, "arctan", 1.0, alpha, beta, gamma)
    x = base.grid.coordinates()["x"]
    u = np.full(base.grid.size, gamma)
    phi = np.full(base.grid.size, -depth)
    band = np.abs(x - 0.5) < 0.1
    u[band] = 0.6 + 0.2 * np.cos(np.pi * (x[band] - 0.5) / 0.2)
    phi[band] = -alpha * u[band]
    edge = (x < 0.08) | (x > 0.92)
    u[edge] = 0.0
    phi[edge] = 0.0
    return with_prescribed_adjoint(base, u, phi), u, phi


def tie_plateau_instance(interior=63):
    """Stationary point of the convexified problem with ``phi = -sqrt(2 alpha beta)``
    on a band where the control vanishes, so the transfer hypothesis fails.

    Returns ``(spec, u, phi)``.
    """
    alpha, beta, gamma = 0.01, 0.02, 10.0
    base = _grid_spec(interior, "cubic", 1.0, alpha, beta, gamma, c3=1.0)
    c = base.cost.phi_threshold
    x = base.grid.coordinates()["x"]
    u = np.zeros(base.grid.size)
    phi = -0.5 * c * np.sin(np.pi * x)
    plateau = np.abs(x - 0.25) < 0.06
    phi[plateau] = -c
    bump = np.abs(x - 0.7) < 0.1
    u[bump] = 4.0
    phi[bump] = -alpha * 4.0
    return with_prescribed_adjoint(base, u, phi), u, phi


def two_well_instance():
    """Single interior node whose convexified objective has two local minima.

    ``a(y) = 200 arctan(y)`` makes the control-to-state map steep near
    ``y = 0`` and flat beyond, so the tracking term is nonconvex in ``u``.
    The minima sit near ``u = 49.6`` and ``u = 317.4``, both on the
    quadratic branch of the envelope.
    """
    return build_problem(
        {
            "dim": 1,
            "nodes": 3,
            "nonlinearity": "arctan",
            "c0": 200.0,
            "target": 10.0,
            "alpha": 0.001,
            "beta": 0.05,
            "gamma": 400.0,
        }
    )


def strong_target_problem(dim=1):
    """Standard problem with a wider box, so that half the zero-control
    threshold on beta still lies in the interior-kink regime."""
    return standard_problem(dim, gamma=20.0)
