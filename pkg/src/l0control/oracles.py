"""Brute-force reference computations for the scalar and discrete formulas.

Every oracle here avoids the case logic of the production code: scalar
minimizations scan a grid plus the obvious candidates, derivatives use
finite differences.  They back the ``oracle`` CLI command and the tests.
"""

import math

import numpy as np
import scipy.sparse.linalg as spla

from . import functionals, pde, pointwise
from .pointwise import CostParams

REMAINDER_COEFFICIENT = -0.5 * (math.sqrt(2.0) - 1.0) ** 2


def random_cost(rng, alpha_max=10.0, beta_max=10.0, gamma_max=100.0):
    """Draw ``(alpha, beta, gamma)`` with ``alpha in [0, alpha_max]``,
    ``beta in (0, beta_max]`` and ``gamma in (0, gamma_max]``."""
    alpha = rng.uniform(0.0, alpha_max)
    beta = beta_max * (1.0 - rng.uniform(0.0, 1.0))
    gamma = gamma_max * (1.0 - rng.uniform(0.0, 1.0))
    return CostParams(alpha, beta, gamma)


def brute_hamiltonian_min(phi, p, samples=201):
    """Minimal value of ``phi u + j0(u)`` on ``[-gamma, gamma]``.

    Scans an equispaced grid together with ``0``, ``+-gamma`` and the
    unconstrained stationary point of the quadratic branch.
    """
    cands = [np.linspace(-p.gamma, p.gamma, samples), [0.0, -p.gamma, p.gamma]]
    if p.alpha > 0:
        cands.append([min(max(-phi / p.alpha, -p.gamma), p.gamma)])
    u = np.concatenate(cands)
    values = phi * u + pointwise.j0_scalar(u, p)
    return float(values.min())


def scalar_argmin_deltas(trials, rng):
    """Largest ``|H(argmin) - brute minimum|`` over random parameter draws."""
    worst = 0.0
    for _ in range(trials):
        p = random_cost(rng)
        phi = rng.uniform(-50.0, 50.0)
        result = pointwise.hamiltonian_argmin(phi, p)
        best = brute_hamiltonian_min(phi, p)
        for u in result.minimizers:
            worst = max(worst, abs(float(pointwise.hamiltonian(u, phi, p)) - best))
        # a brute-force value strictly below the reported minimum would be a miss
        worst = max(worst, float(pointwise.hamiltonian(result.minimizers[0], phi, p)) - best)
    return worst


def envelope_deltas(parameter_sets, samples, rng):
    """Largest ``|g - hull|`` and the largest defect of the equality set.

    On ``{u = 0} ∪ {|u| >= s}`` the envelope must equal ``j0`` exactly.
    """
    worst, equality = 0.0, 0.0
    for k in range(parameter_sets):
        p = random_cost(rng)
        if k % 2 == 0 and p.regime != pointwise.INTERIOR_KINK:
            # alternate the regimes: force an interior kink on even draws
            p = CostParams(max(p.alpha, 1e-3), p.beta, 2.0 * math.sqrt(2 * p.beta / max(p.alpha, 1e-3)) + 1.0)
        if p.alpha == 0:
            p = CostParams(1e-3, p.beta, p.gamma)
        hull = pointwise.convex_envelope_oracle(p, samples)
        xs = hull.samples[0]
        worst = max(worst, float(np.max(np.abs(pointwise.g_scalar(xs, p) - hull(xs)))))
        if p.regime == pointwise.INTERIOR_KINK:
            on = (xs == 0) | (np.abs(xs) >= p.kink)
            defect = np.abs(pointwise.g_scalar(xs[on], p) - pointwise.j0_scalar(xs[on], p))
            equality = max(equality, float(defect.max()))
    return worst, equality


def brute_prox(w, t, p, integrand, samples=20001):
    """Minimum of ``(v - w)^2 / (2t) + integrand(v)`` on a grid of the box."""
    v = np.concatenate([np.linspace(-p.gamma, p.gamma, samples), [0.0]])
    return float(np.min((v - w) ** 2 / (2 * t) + integrand(v, p)))


def prox_deltas(trials, rng):
    """Objective gaps of both proximal maps against the grid minimum.

    The grid minimum can only exceed the true one, so the reported value is
    ``max(prox objective - grid minimum)``; it must be at most the grid
    resolution error.
    """
    worst_j0, worst_g = -np.inf, -np.inf
    for _ in range(trials):
        p = random_cost(rng, gamma_max=10.0)
        if p.alpha == 0:
            continue
        w = rng.uniform(-2 * p.gamma, 2 * p.gamma)
        t = rng.uniform(0.05, 5.0)
        v0 = pointwise.prox_j0(w, t, p)[0]
        f0 = (v0 - w) ** 2 / (2 * t) + float(pointwise.j0_scalar(v0, p))
        worst_j0 = max(worst_j0, f0 - brute_prox(w, t, p, pointwise.j0_scalar))
        v1 = float(pointwise.prox_g(w, t, p))
        f1 = (v1 - w) ** 2 / (2 * t) + float(pointwise.g_scalar(v1, p))
        worst_g = max(worst_g, f1 - brute_prox(w, t, p, pointwise.g_scalar))
    return worst_j0, worst_g


def remainder_counterexample(n=1024, k_values=(4, 16, 64)):
    """Discrete cost remainder for ``alpha = beta = 1``, ``u = 2``, ``h = -1`` on ``(0, 1/k)``.

    Returns per ``k`` the remainder, ``|h|^2`` and the ratio, which should be
    ``-(sqrt 2 - 1)^2 / 2`` for every ``k``.
    """
    from .problem import Grid

    p = CostParams(1.0, 1.0, 10.0)
    grid = Grid.unit(1, n)
    x = grid.coordinates()["x"]
    u = np.full(grid.size, 2.0)
    rows = []
    for k in k_values:
        h = np.where(x < 1.0 / k, -1.0, 0.0)
        remainder = grid.integrate(pointwise.taylor_remainder(u, h, p))
        norm2 = grid.inner(h, h)
        rows.append({"k": k, "remainder": remainder, "norm2": norm2, "ratio": remainder / norm2})
    return rows


def scalar_remainder_bound_slacks(trials, rng):
    """Slacks of the pointwise remainder lower bound and the surrogate inequalities.

    Returns ``(remainder_slack, surrogate_slack, monotone_slack)`` minima over
    random ``(u, h, v)`` draws in the interior-kink regime.
    """
    rem, sur, mono = np.inf, np.inf, np.inf
    for _ in range(trials // 1000 or 1):
        p = random_cost(rng)
        alpha = max(p.alpha, 1e-2)
        gamma = 2 * math.sqrt(2 * p.beta / alpha) + 1.0
        p = CostParams(alpha, p.beta, gamma)
        m = min(trials, 1000)
        u = rng.uniform(-gamma, gamma, m)
        h = rng.uniform(-2 * gamma, 2 * gamma, m)
        v = rng.uniform(-gamma, gamma, m)
        rem = min(rem, float(np.min(pointwise.taylor_remainder(u, h, p) - pointwise.remainder_lower_bound(u, h, p))))
        s1, s2 = surrogate_slacks(u, h, v, p)
        sur = min(sur, float(np.min(s1)))
        mono = min(mono, float(np.min(s2)))
    return rem, sur, mono


def surrogate_slacks(u, h, v, p):
    """Pointwise slacks of the two inequalities built on the sign-restricted term.

    ``s1 = g(u+h) - g(u) - g'(u;h) - gtilde(u;h)/2 >= 0`` and
    ``s2 = -g'(u;v-u) - gtilde(u;v-u) - g'(v;u-v) >= 0``.
    """
    s1 = (
        pointwise.g_scalar(u + h, p)
        - pointwise.g_scalar(u, p)
        - pointwise.g_dir1(u, h, p)
        - 0.5 * pointwise.gtilde_scalar(u, h, p)
    )
    d = v - u
    s2 = -pointwise.g_dir1(u, d, p) - pointwise.gtilde_scalar(u, d, p) - pointwise.g_dir1(v, -d, p)
    return s1, s2


def surrogate_equality_defects(trials, rng):
    """Largest ``|s1|`` and ``|s2|`` on constructed sign-matched cases.

    With ``|u| >= s`` and the increment pointing away from zero
    (``sign(h) = sign(v - u) = sign(u)``) both surrogate inequalities hold
    with equality, because the envelope is quadratic along the whole step.
    Returns ``(defect1, defect2)`` relative to ``alpha (u^2 + h^2)``, the
    size of the terms that cancel.
    """
    d1 = d2 = 0.0
    for _ in range(max(trials // 1000, 1)):
        p = random_cost(rng)
        alpha = max(p.alpha, 1e-2)
        s = math.sqrt(2 * p.beta / alpha)
        gamma = 2 * s + 1.0
        p = CostParams(alpha, p.beta, gamma)
        m = min(trials, 1000)
        sign = rng.choice([-1.0, 1.0], m)
        u = sign * rng.uniform(s, gamma, m)
        v = sign * rng.uniform(np.abs(u), gamma)
        h = v - u
        keep = h != 0
        s1, s2 = surrogate_slacks(u[keep], h[keep], v[keep], p)
        scale = alpha * (u[keep] ** 2 + h[keep] ** 2)
        d1 = max(d1, float(np.max(np.abs(s1) / scale)))
        d2 = max(d2, float(np.max(np.abs(s2) / scale)))
    return d1, d2


def state_increment(spec, y, w, iterations=20):
    """Solve ``A d + a(y + d) - a(y) = w`` for the state change ``d``.

    Newton on the increment keeps its residual at the round-off of ``d``
    rather than of ``y``, which finite differences with small steps need.
    """
    A = pde.assemble_operator(spec).matrix
    a = spec.nonlinearity
    ay = a.value(y)
    d = np.zeros_like(y)
    for _ in range(iterations):
        res = A @ d + (a.value(y + d) - ay) - w
        step = spla.spsolve(pde.jacobian(spec, y + d), -res)
        d = d + step
        if np.max(np.abs(step)) <= 4 * np.finfo(float).eps * max(np.max(np.abs(d)), 1e-300):
            break
    return d


def fd_derivative_checks(spec, u, directions, rng, eps_grad=1e-5, eps_hess=1e-3):
    """Finite-difference checks of the adjoint gradient and the Hessian form.

    Returns the worst relative errors of ``<phi, v>`` against central
    differences of ``F``, of ``F''(u)(v, v)`` against second differences of
    ``F``, and of the duality identity ``<phi, v> = <L_y, z_v>``.
    """
    grid = spec.grid
    cache = functionals.evaluate(spec, u)
    worst_grad = worst_hess = worst_dual = 0.0
    misfit = cache.y - spec.objective.target
    for _ in range(directions):
        v = rng.standard_normal(grid.size)
        v /= grid.norm_l2(v)
        g = grid.inner(cache.phi, v)
        d_plus = state_increment(spec, cache.y, eps_grad * v)
        d_minus = state_increment(spec, cache.y, -eps_grad * v)
        # F(u+ev) - F(u-ev) written through state increments
        fd = grid.integrate(0.5 * (d_plus**2 - d_minus**2) + misfit * (d_plus - d_minus)) / (2 * eps_grad)
        worst_grad = max(worst_grad, abs(fd - g) / max(abs(g), 1e-300))
        hess = functionals.hess_F_apply(cache, v, v)
        # second differences of states avoid subtracting nearly equal F values
        y_plus = state_increment(spec, cache.y, eps_hess * v)
        y_minus = state_increment(spec, cache.y, -eps_hess * v)
        second = grid.integrate(0.5 * (y_plus**2 + y_minus**2) + misfit * (y_plus + y_minus))
        worst_hess = max(worst_hess, abs(second / eps_hess**2 - hess) / max(abs(hess), 1e-300))
        dual = grid.inner(spec.objective.d1(cache.y), cache.linearized(v))
        worst_dual = max(worst_dual, abs(dual - g) / max(abs(g), 1e-300))
    return {"gradient": worst_grad, "hessian": worst_hess, "duality": worst_dual}


def run_all(rng, spec=None, scale=1.0):
    """Run every oracle and return rows ``(name, delta, tolerance, ok)``.

    ``scale`` shrinks the number of random draws for quick runs.
    """
    from . import instances

    draws = max(int(10000 * scale), 10)
    rows = []

    def add(name, delta, tol, ok=None):
        rows.append({"oracle": name, "delta": float(delta), "tolerance": tol,
                     "ok": bool(delta <= tol) if ok is None else bool(ok)})

    add("scalar argmin vs brute force", scalar_argmin_deltas(draws, rng), 1e-10)
    env, eq = envelope_deltas(max(int(100 * scale), 2), 100001, rng)
    add("envelope vs lower hull", env, 1e-3)
    add("envelope equality set", eq, 0.0)
    pj, pg = prox_deltas(max(int(1000 * scale), 10), rng)
    add("hard-threshold prox vs grid", pj, 1e-6)
    add("envelope prox vs grid", pg, 1e-6)
    for row in remainder_counterexample():
        rel = abs(row["ratio"] - REMAINDER_COEFFICIENT) / abs(REMAINDER_COEFFICIENT)
        add(f"remainder counterexample k={row['k']} (coefficient {row['ratio']:.10f})", rel, 1e-12)
    rem, sur, mono = scalar_remainder_bound_slacks(max(int(100000 * scale), 1000), rng)
    add("remainder lower bound slack", max(-rem, 0.0), 1e-12)
    add("surrogate expansion slack", max(-sur, 0.0), 1e-12)
    add("surrogate monotonicity slack", max(-mono, 0.0), 1e-12)
    e1, e2 = surrogate_equality_defects(max(int(100000 * scale), 1000), rng)
    add("surrogate expansion equality (sign-matched)", e1, 1e-9)
    add("surrogate monotonicity equality (sign-matched)", e2, 1e-9)
    spec = spec or instances.standard_problem(1)
    x = spec.grid.coordinates()
    u = 0.5 * spec.gamma * np.sin(np.pi * x["x"]) * (np.sin(np.pi * x["y"]) if "y" in x else 1.0)
    fd = fd_derivative_checks(spec, u, 10, rng)
    add("adjoint gradient vs central differences", fd["gradient"], 1e-6)
    add("Hessian form vs second differences", fd["hessian"], 1e-4)
    add("duality identity", fd["duality"], 1e-10)
    return rows
