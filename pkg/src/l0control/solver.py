"""Iterative solvers for the sparse problem and its convexification.

``solve_pc`` is a monotone proximal-gradient method for ``F + G``.
``solve_l0`` combines hard-thresholding proximal steps, the pointwise
maximum-principle map and single-node flips; its output is PMP-stationary,
never certified optimal.  Both accept a restriction to the nodes where a
reference control is nonzero (the reduced problem).
"""

import collections
import csv
import dataclasses

import numpy as np

from . import functionals, optimality, pde, pointwise
from .problem import l0_norm, uad_project

ARMIJO = 1e-4


def _decreased(new, old, drop):
    """Sufficient decrease up to the round-off level of the objective."""
    return new <= old - drop + 64 * np.finfo(float).eps * max(1.0, abs(old))


class SolverError(RuntimeError):
    def __init__(self, message, u, trace):
        super().__init__(message)
        self.u = u
        self.trace = trace


class MaxIterations(SolverError):
    pass


class Cycling(SolverError):
    def __init__(self, message, u, trace, period):
        super().__init__(message, u, trace)
        self.period = period


@dataclasses.dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 2000
    tol: float = 1e-8
    step: float = None
    backtracking: bool = True
    margin: float = 1.1
    power_iterations: int = 30
    cycle_window: int = 10
    min_step_ratio: float = 1e-12
    restrict: np.ndarray = None
    newton: pde.NewtonSettings = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.step is not None and not self.step > 0:
            raise ValueError("step must be positive")
        if not self.margin >= 1:
            raise ValueError("curvature margin must be >= 1")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclasses.dataclass(eq=False)
class SolveTrace:
    objective: list = dataclasses.field(default_factory=list)
    objective_pc: list = dataclasses.field(default_factory=list)
    residual: list = dataclasses.field(default_factory=list)
    support: list = dataclasses.field(default_factory=list)
    moves: list = dataclasses.field(default_factory=list)
    step0: float = None
    step: float = None
    converged: bool = False
    cycles: int = 0

    @property
    def iterations(self):
        return max(len(self.residual) - 1, 0)

    @property
    def final_residual(self):
        return self.residual[-1] if self.residual else None

    def record(self, spec, cache, residual, move):
        self.objective.append(float(cache.J))
        self.objective_pc.append(float(cache.J_pc))
        self.residual.append(float(residual))
        self.support.append(l0_norm(spec.grid, cache.u, spec.zero_tol))
        self.moves.append(move)

    def summary(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "initial_step": self.step0,
            "final_step": self.step,
            "cycle_detections": self.cycles,
            "final_J": self.objective[-1] if self.objective else None,
            "final_J_pc": self.objective_pc[-1] if self.objective_pc else None,
            "final_support": self.support[-1] if self.support else None,
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "J", "J_pc", "residual", "support_measure", "move"])
            for k, row in enumerate(
                zip(self.objective, self.objective_pc, self.residual, self.support, self.moves)
            ):
                writer.writerow([k, *(repr(x) for x in row[:4]), row[4]])


def estimate_lipschitz(spec, cache, iterations=30):
    """Power-iteration estimate of the Lipschitz constant of ``u -> phi_u``.

    The Jacobian of the adjoint map is ``S D S`` with ``S`` the linearized
    solution operator and ``D`` the pointwise Hessian weight; ``|D|`` is used
    so the estimate bounds the curvature in every direction.
    """
    weight = np.abs(functionals.hess_weight(cache))
    x = np.random.default_rng(0).standard_normal(spec.grid.size)
    lam = 0.0
    for _ in range(iterations):
        x /= np.linalg.norm(x)
        y = cache.linearized(weight * cache.linearized(x))
        lam = float(x @ y)
        x = y
    return max(lam, np.finfo(float).tiny)


def _initial_step(spec, cache, settings):
    if settings.step is not None:
        return settings.step
    return 1.0 / (settings.margin * estimate_lipschitz(spec, cache, settings.power_iterations))


def _allowed(spec, settings):
    if settings.restrict is None:
        return np.ones(spec.grid.size, dtype=bool)
    allowed = np.asarray(settings.restrict, dtype=bool)
    if allowed.shape != (spec.grid.size,):
        raise ValueError("restriction mask must have one entry per interior node")
    return allowed


def _start(spec, u0, allowed):
    u0 = np.zeros(spec.grid.size) if u0 is None else np.asarray(u0, dtype=float)
    if u0.shape != (spec.grid.size,):
        raise ValueError(f"initial control must have {spec.grid.size} entries")
    return np.where(allowed, uad_project(u0, spec.gamma), 0.0)


def pc_residual(spec, cache, allowed):
    r = optimality.pc_stationarity_residual(spec, cache)["residual"]
    return float(np.max(np.where(allowed, r, 0.0)))


def solve_pc(spec, u0=None, settings=None):
    """Monotone proximal gradient for ``min F(u) + G(u)`` over the box.

    Stops when the stationarity residual is at most ``settings.tol``.
    Returns ``(u, trace)``; raises :class:`MaxIterations` otherwise.
    """
    settings = settings or SolverSettings()
    p = spec.cost
    allowed = _allowed(spec, settings)
    cache = functionals.evaluate(spec, _start(spec, u0, allowed), settings.newton)
    t = _initial_step(spec, cache, settings)
    trace = SolveTrace(step0=t)
    for _ in range(settings.max_iter + 1):
        res = pc_residual(spec, cache, allowed)
        trace.record(spec, cache, res, "prox")
        if res <= settings.tol:
            trace.converged = True
            break
        if len(trace.residual) > settings.max_iter:
            break
        while True:
            u_new = np.where(allowed, pointwise.prox_g(cache.u - t * cache.phi, t, p), 0.0)
            new = functionals.evaluate(spec, u_new, settings.newton)
            if not settings.backtracking:
                break
            d = u_new - cache.u
            if _decreased(new.J_pc, cache.J_pc, ARMIJO / (2 * t) * spec.grid.inner(d, d)):
                break
            if t < trace.step0 * settings.min_step_ratio:
                break
            t *= 0.5
        if not _decreased(new.J_pc, cache.J_pc, 0.0):
            # no decrease at the smallest step: the iterate is stationary to round-off
            break
        cache = new
        t = min(2 * t, trace.step0)
    trace.step = t
    if not trace.converged:
        raise MaxIterations(
            f"convexified solver stopped at residual {trace.final_residual:.3e}", cache.u.copy(), trace
        )
    return np.array(cache.u), trace


def pmp_residual_max(spec, cache, allowed):
    """Largest node-wise residual of the maximum principle.

    The Hamiltonian gap alone is quadratic in the control error, so it is
    combined with the convexified stationarity residual, which is linear in
    it.  Returns the maximum and the node-wise residual.
    """
    gap = optimality.pmp_residual(spec, cache).residual
    residual = np.where(allowed, np.maximum(gap, optimality.pc_stationarity_residual(spec, cache)["residual"]), 0.0)
    return float(np.max(residual)), residual


def _support_key(u, zero_tol):
    return (np.abs(u) > zero_tol).tobytes()


PARTIAL_LEVELS = (0.0, 0.5, 0.9)
# a descent step must cut the PMP residual by this fraction to count as progress
STALL_FRACTION = 1e-3


def solve_l0(spec, u0=None, settings=None):
    """PMP fixed-point iteration for the sparse problem.

    Each iteration tries, in order: the pointwise maximum-principle map
    ``u <- argmin H(., phi_u)`` on the violating nodes whose residual is at
    least a fraction ``(0, 0.5, 0.9)`` of the largest, a backtracked
    hard-thresholding proximal step, and finally a flip of the single worst
    node.  The first two are only accepted when ``J`` strictly decreases,
    the proximal step only when it also cuts the residual noticeably;
    the flip is accepted unconditionally.  A support pattern that repeats
    within ``cycle_window`` iterations halves the starting proximal step.
    Stops when the PMP residual (Hamiltonian gap combined with the
    convexified stationarity residual) is at most ``tol`` with no
    sparsity-structure violation.
    """
    settings = settings or SolverSettings()
    p = spec.cost
    allowed = _allowed(spec, settings)
    cache = functionals.evaluate(spec, _start(spec, u0, allowed), settings.newton)
    t_cap = _initial_step(spec, cache, settings)
    trace = SolveTrace(step0=t_cap)
    window = collections.deque(maxlen=settings.cycle_window)
    move = "start"
    for _ in range(settings.max_iter + 1):
        res, residual = pmp_residual_max(spec, cache, allowed)
        trace.record(spec, cache, res, move)
        structure = optimality.check_sparsity_structure(spec, cache)
        bad = [i for i in structure["nodes"] if allowed[i]]
        if res <= settings.tol and not bad:
            trace.converged = True
            break
        if len(trace.residual) > settings.max_iter:
            break
        u_map = np.where(allowed, pointwise.hamiltonian_min(cache.phi, p)[0], 0.0)
        if res <= settings.tol:
            # only tie-band structure defects remain: apply the map there
            u_new = np.array(cache.u)
            u_new[bad] = u_map[bad]
            cache, move = functionals.evaluate(spec, u_new, settings.newton), "structure"
            continue
        new, move = _pmp_map_step(spec, cache, u_map, residual, allowed, settings)
        if new is None:
            new = _hard_threshold_step(spec, cache, t_cap, trace.step0 * settings.min_step_ratio, allowed, settings)
            move = "prox"
            if new is not None and pmp_residual_max(spec, new, allowed)[0] > (1 - STALL_FRACTION) * res:
                # creeping descent that leaves the residual in place; switch the worst node instead
                new = None
        if new is not None:
            cache = new
            continue
        worst = int(np.argmax(np.where(allowed, residual, -np.inf)))
        u_new = np.array(cache.u)
        u_new[worst] = u_map[worst]
        key = _support_key(u_new, spec.zero_tol)
        if key in window:
            trace.cycles += 1
            t_cap *= 0.5
            if t_cap < trace.step0 * settings.min_step_ratio:
                trace.step = t_cap
                raise Cycling("hard-thresholding iteration cycles", cache.u.copy(), trace, len(window))
        window.append(key)
        cache, move = functionals.evaluate(spec, u_new, settings.newton), "flip"
    trace.step = t_cap
    if not trace.converged:
        raise MaxIterations(f"PMP iteration stopped at residual {trace.final_residual:.3e}", cache.u.copy(), trace)
    return np.array(cache.u), trace


def _pmp_map_step(spec, cache, u_map, residual, allowed, settings):
    """Apply the PMP map on the worst violators; first strict decrease wins."""
    peak = np.max(np.where(allowed, residual, 0.0))
    tried = set()
    for level in PARTIAL_LEVELS:
        nodes = allowed & (residual > settings.tol) & (residual >= level * peak)
        key = nodes.tobytes()
        if key in tried or not nodes.any():
            continue
        tried.add(key)
        new = functionals.evaluate(spec, np.where(nodes, u_map, cache.u), settings.newton)
        if new.J < cache.J:
            return new, "pmp-map" if level == 0 else f"pmp-map-{level}"
    return None, None


def _hard_threshold_step(spec, cache, t, t_min, allowed, settings):
    """Backtracked hard-thresholding step from ``t``; None without strict decrease."""
    p = spec.cost
    while t >= t_min:
        u_new = np.where(allowed, pointwise.prox_j0_field(cache.u - t * cache.phi, t, p), 0.0)
        if np.array_equal(u_new, cache.u):
            return None
        new = functionals.evaluate(spec, u_new, settings.newton)
        d = u_new - cache.u
        # strict decrease: accepting round-off moves would stall the flips
        if new.J < cache.J - ARMIJO / (2 * t) * spec.grid.inner(d, d):
            return new
        t *= 0.5
    return None


def solve(spec, kind, u0=None, settings=None):
    if kind == "l0":
        return solve_l0(spec, u0, settings)
    if kind == "pc":
        return solve_pc(spec, u0, settings)
    raise ValueError(f"unknown solver {kind!r}; expected 'l0' or 'pc'")


def envelope_defect(spec, u):
    """Node-wise ``|g(u) - j0(u)|``."""
    p = spec.cost
    return np.abs(pointwise.g_scalar(u, p) - pointwise.j0_scalar(u, p))


def solve_transfer(spec, settings=None, u0=None):
    """Solve the convexified problem and test whether the solution transfers.

    The transfer hypothesis is that no node has ``|phi| = sqrt(2 alpha
    beta)`` (within the tie tolerance); then the envelope equals the
    original integrand at the solution and ``J = J_pc``.
    """
    p = spec.cost
    if p.regime != pointwise.INTERIOR_KINK:
        raise ValueError("transfer check needs the interior-kink regime")
    u, trace = solve_pc(spec, u0, settings)
    cache = functionals.evaluate(spec, u)
    ties = np.abs(np.abs(cache.phi) - p.phi_threshold) <= optimality.TIE_TOL
    defect = envelope_defect(spec, cache.u)
    scale = np.maximum(1.0, pointwise.j0_scalar(cache.u, p))
    eq_holds = bool(np.all(defect <= 1e-12 * scale))
    gap = abs(cache.J - cache.J_pc)
    tie_measure = float(np.count_nonzero(ties)) * spec.grid.cell_volume
    return {
        "u": u,
        "trace": trace,
        "cache": cache,
        "tie_nodes": np.flatnonzero(ties).tolist(),
        "tie_measure": tie_measure,
        "envelope_max_defect": float(defect.max()),
        "envelope_equality": eq_holds,
        "J": cache.J,
        "J_pc": cache.J_pc,
        "J_gap": gap,
        "transfer_holds": tie_measure == 0 and eq_holds,
    }


def sweep_beta(spec, betas, settings=None, u0=None):
    """Solve both problems along an increasing beta grid with warm starts.

    Returns one row (dict) per beta; solver failures are recorded in the
    row and the sweep continues from the last good iterate.
    """
    betas = [float(b) for b in betas]
    if not betas:
        raise ValueError("beta grid is empty")
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("beta grid must be strictly increasing")
    zero_cache = functionals.evaluate(spec, np.zeros(spec.grid.size))
    warm = {"l0": u0, "pc": u0}
    rows = []
    for beta in betas:
        cell = spec.replace(beta=beta)
        bstar = optimality.beta_star(cell, zero_cache)
        row = {"beta": beta, "beta_star": bstar, "above_beta_star": beta > bstar}
        for kind in ("l0", "pc"):
            try:
                u, trace = solve(cell, kind, warm[kind], settings)
            except (SolverError, pde.NonConvergence) as exc:
                row[f"{kind}_error"] = str(exc)
                continue
            warm[kind] = u
            cache = functionals.evaluate(cell, u)
            row[f"{kind}_support"] = l0_norm(cell.grid, u, cell.zero_tol)
            row[f"{kind}_J"] = cache.J
            row[f"{kind}_J_pc"] = cache.J_pc
            row[f"{kind}_iterations"] = trace.iterations
            if kind == "pc" and cell.cost.regime == pointwise.INTERIOR_KINK:
                ties = np.abs(np.abs(cache.phi) - cell.cost.phi_threshold) <= optimality.TIE_TOL
                row["transfer_holds"] = bool(
                    not ties.any() and np.all(envelope_defect(cell, u) <= 1e-12 * np.maximum(1.0, pointwise.j0_scalar(u, cell.cost)))
                )
        rows.append(row)
    return rows
