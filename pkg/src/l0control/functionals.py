"""Objective functionals and their derivatives via adjoint calculus.

``F(u) = int L(x, y_u)``, ``G(u) = int g(u)``, ``J = F + alpha/2 |u|^2 +
beta |u|_0`` and ``J_pc = F + G``.  Gradients are Riesz representatives in
the discrete L2 inner product, so ``grad F(u) = phi_u`` exactly.
"""

import dataclasses

import numpy as np

from . import pde, pointwise
from .problem import l0_norm

DENSE_CAP = 4096


@dataclasses.dataclass(frozen=True, eq=False)
class EvalCache:
    """Control with its state, adjoint and all objective pieces."""

    spec: object
    u: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    F: float
    l2_term: float
    l0_term: float
    G: float
    factor: object
    newton_iterations: int

    @property
    def J(self):
        return self.F + self.l2_term + self.l0_term

    @property
    def J_pc(self):
        return self.F + self.G

    def linearized(self, v):
        """``z_v`` at this control (reuses the factorization)."""
        return pde.solve_linearized(self.spec, self.y, v, self.factor)

    def summary(self):
        return {
            "F": self.F,
            "l2_term": self.l2_term,
            "l0_term": self.l0_term,
            "G": self.G,
            "J": self.J,
            "J_pc": self.J_pc,
            "support_measure": l0_norm(self.spec.grid, self.u, self.spec.zero_tol),
            "max_abs_u": float(np.max(np.abs(self.u))),
            "max_abs_y": float(np.max(np.abs(self.y))),
            "max_abs_phi": float(np.max(np.abs(self.phi))),
            "newton_iterations": self.newton_iterations,
        }


def evaluate(spec, u, newton=None):
    """Solve state and adjoint at ``u`` and integrate every objective piece."""
    grid = spec.grid
    p = spec.cost
    u = np.array(u, dtype=float)
    u.setflags(write=False)
    y, iterations, _ = pde.solve_state(spec, u, newton, info=True)
    factor = pde.factorize(spec, y)
    phi = pde.solve_adjoint(spec, y, factor)
    for arr in (y, phi):
        arr.setflags(write=False)
    return EvalCache(
        spec=spec,
        u=u,
        y=y,
        phi=phi,
        F=grid.integrate(spec.objective.value(y)),
        l2_term=0.5 * p.alpha * grid.inner(u, u),
        l0_term=p.beta * l0_norm(grid, u, spec.zero_tol),
        G=grid.integrate(pointwise.g_scalar(u, p)),
        factor=factor,
        newton_iterations=iterations,
    )


def grad_F(cache):
    return cache.phi.copy()


def hess_weight(cache):
    """Pointwise weight ``d2L/dy2 - phi d2a/dy2`` of the second derivative."""
    spec = cache.spec
    return spec.objective.d2(cache.y) - cache.phi * spec.nonlinearity.d2(cache.y)


def hess_F_apply(cache, v1, v2):
    """``F''(u)(v1, v2) = int (L'' - phi a'') z_v1 z_v2``."""
    z1 = cache.linearized(v1)
    z2 = z1 if v2 is v1 else cache.linearized(v2)
    return cache.spec.grid.integrate(hess_weight(cache) * z1 * z2)


def dense_forms(cache, nodes=None):
    """Dense matrices of ``F''(u)`` and of ``v -> |z_v|^2`` on ``nodes``.

    Returns ``(H, M)`` with ``v^T H v = F''(u)(v, v)`` and
    ``v^T M v = |z_v|^2_L2`` for ``v`` supported on ``nodes`` (all interior
    nodes by default), in the coordinates of the node values.
    """
    grid = cache.spec.grid
    nodes = np.arange(grid.size) if nodes is None else np.asarray(nodes)
    if grid.size > DENSE_CAP:
        raise ValueError(
            f"dense assembly limited to {DENSE_CAP} interior nodes, grid has {grid.size}; "
            "use a coarser grid"
        )
    rhs = np.zeros((grid.size, nodes.size))
    rhs[nodes, np.arange(nodes.size)] = 1.0
    S = cache.linearized(rhs)
    vol = grid.cell_volume
    M = vol * (S.T @ S)
    H = vol * (S.T @ (hess_weight(cache)[:, None] * S))
    return 0.5 * (H + H.T), 0.5 * (M + M.T)


def eval_G(spec, u):
    return spec.grid.integrate(pointwise.g_scalar(u, spec.cost))


def G_dir1(spec, u, v):
    return spec.grid.integrate(pointwise.g_dir1(u, v, spec.cost))


def G_dir2(spec, u, v):
    return spec.grid.integrate(pointwise.g_dir2(u, v, spec.cost))


def G_tilde(spec, u, v):
    return spec.grid.integrate(pointwise.gtilde_scalar(u, v, spec.cost))


def _ball_samples(grid, radius, trials, rng):
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be positive")
    for _ in range(trials):
        d = rng.standard_normal(grid.size)
        d /= grid.norm_l2(d)
        yield radius * rng.uniform(0.05, 1.0) * d


def probe_lipschitz_F1(spec, ubar, radius, trials, rng=None):
    """Empirical ``C`` in ``|F'(u) - F'(ubar)| <= C |z_{u-ubar}|`` on a ball."""
    rng = np.random.default_rng(rng)
    grid = spec.grid
    base = evaluate(spec, ubar)
    ratios = []
    for h in _ball_samples(grid, radius, trials, rng):
        other = evaluate(spec, base.u + h)
        z = base.linearized(h)
        ratios.append(grid.norm_l2(other.phi - base.phi) / grid.norm_l2(z))
    ratios = np.array(ratios)
    return {
        "radius": radius,
        "trials": trials,
        "max_ratio": float(ratios.max()),
        "mean_ratio": float(ratios.mean()),
        "ratios": ratios.tolist(),
        "bounded": bool(np.all(np.isfinite(ratios))),
    }


def probe_hess_continuity(spec, ubar, radius, trials, rng=None):
    """Empirical ``|(F''(u) - F''(ubar))(u-ubar)^2| / |z_{u-ubar}|^2`` on a ball."""
    rng = np.random.default_rng(rng)
    grid = spec.grid
    base = evaluate(spec, ubar)
    ratios = []
    for h in _ball_samples(grid, radius, trials, rng):
        other = evaluate(spec, base.u + h)
        z = base.linearized(h)
        diff = hess_F_apply(other, h, h) - hess_F_apply(base, h, h)
        ratios.append(abs(diff) / grid.norm_l2(z) ** 2)
    ratios = np.array(ratios)
    return {
        "radius": radius,
        "trials": trials,
        "max_ratio": float(ratios.max()),
        "mean_ratio": float(ratios.mean()),
        "ratios": ratios.tolist(),
    }
