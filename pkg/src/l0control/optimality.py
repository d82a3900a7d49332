"""First-order optimality checks, critical cones and first-order growth.

"For almost all x" is read as "at every interior node"; measures of node
sets are node counts times the cell volume.
"""

import csv
import dataclasses

import numpy as np

from . import pointwise
from .pointwise import INTERIOR_KINK

# |phi| is treated as equal to sqrt(2 alpha beta) within this absolute tolerance
TIE_TOL = 1e-9
BOUND_RTOL = 1e-12

ZERO, NONNEG, NONPOS, FREE = 0, 1, 2, 3
TAG_NAMES = {ZERO: "zero", NONNEG: "nonneg", NONPOS: "nonpos", FREE: "free"}
CONE_KINDS = ("tangent", "C_u", "C_pc", "D_tau")


@dataclasses.dataclass(frozen=True, eq=False)
class ConeMask:
    """Per-node sign restrictions describing a polyhedral cone of directions."""

    tags: np.ndarray
    kind: str
    tau: float = None

    @property
    def free_nodes(self):
        """Nodes where the direction is not forced to vanish."""
        return np.flatnonzero(self.tags != ZERO)

    @property
    def sign_nodes(self):
        return np.flatnonzero((self.tags == NONNEG) | (self.tags == NONPOS))

    @property
    def is_trivial(self):
        return not np.any(self.tags != ZERO)

    def contains(self, v, tol=0.0):
        v = np.asarray(v)
        return bool(
            np.all(np.abs(v[self.tags == ZERO]) <= tol)
            and np.all(v[self.tags == NONNEG] >= -tol)
            and np.all(v[self.tags == NONPOS] <= tol)
        )

    def project(self, v):
        v = np.array(v, dtype=float)
        v[self.tags == ZERO] = 0.0
        v[self.tags == NONNEG] = np.maximum(v[self.tags == NONNEG], 0.0)
        v[self.tags == NONPOS] = np.minimum(v[self.tags == NONPOS], 0.0)
        return v

    def counts(self):
        return {name: int(np.count_nonzero(self.tags == tag)) for tag, name in TAG_NAMES.items()}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["node", "tag"])
            for i, tag in enumerate(self.tags):
                writer.writerow([i, TAG_NAMES[int(tag)]])


@dataclasses.dataclass(frozen=True, eq=False)
class PMPReport:
    max_residual: float
    residual: np.ndarray
    cases: list
    sparsity_violations: int
    tie_measure: float

    def summary(self):
        labels, counts = np.unique(np.array([str(c) for c in self.cases]), return_counts=True)
        return {
            "max_residual": self.max_residual,
            "sparsity_violations": self.sparsity_violations,
            "tie_measure": self.tie_measure,
            "case_counts": dict(zip(labels.tolist(), counts.tolist())),
        }


def _effective_control(spec, cache):
    u = np.asarray(cache.u)
    return np.where(np.abs(u) <= spec.zero_tol, 0.0, u)


def _at_upper(u, gamma):
    return u >= gamma * (1 - BOUND_RTOL)


def _at_lower(u, gamma):
    return u <= -gamma * (1 - BOUND_RTOL)


def pmp_residual(spec, cache):
    """Node-wise gap ``H(u_i) - min_v H(v)`` of the pointwise Hamiltonian.

    The tracking term of the Hamiltonian does not depend on the control and
    cancels, so only ``phi u + alpha/2 u^2 + beta |u|_0`` enters.
    """
    p = spec.cost
    u = _effective_control(spec, cache)
    phi = np.asarray(cache.phi)
    _, hmin = pointwise.hamiltonian_min(phi, p)
    residual = np.maximum(pointwise.hamiltonian(u, phi, p) - hmin, 0.0)
    cases = [pointwise.hamiltonian_argmin(f, p).case for f in phi.tolist()]
    ties = sum(1 for c in cases if c in (2, 5, "tie"))
    return PMPReport(
        max_residual=float(residual.max()),
        residual=residual,
        cases=cases,
        sparsity_violations=check_sparsity_structure(spec, cache)["violations"],
        tie_measure=ties * spec.grid.cell_volume,
    )


def check_sparsity_structure(spec, cache, rtol=1e-9):
    """Support structure implied by the maximum principle, node by node."""
    p = spec.cost
    u = _effective_control(spec, cache)
    phi = np.abs(np.asarray(cache.phi))
    nonzero = u != 0
    if p.alpha > 0:
        low_adjoint = phi < p.phi_threshold - TIE_TOL
        floor = min(p.kink, p.gamma)
        small = nonzero & (np.abs(u) < floor * (1 - rtol))
    else:
        low_adjoint = phi < p.beta / p.gamma - TIE_TOL
        small = nonzero & (np.abs(np.abs(u) - p.gamma) > rtol * p.gamma)
    zero_violation = low_adjoint & nonzero
    bad = np.flatnonzero(zero_violation | small)
    return {
        "violations": int(bad.size),
        "nodes": bad.tolist(),
        "zero_clause_violations": int(np.count_nonzero(zero_violation)),
        "magnitude_clause_violations": int(np.count_nonzero(small)),
    }


def beta_star(spec, cache_at_zero):
    """Discrete threshold above which ``u = 0`` satisfies the PMP strictly.

    Uses ``M = max|phi_0|``: ``M^2 / (2 alpha)`` for ``alpha > 0`` and
    ``gamma M`` for ``alpha = 0``.
    """
    M = float(np.max(np.abs(cache_at_zero.phi)))
    if spec.alpha > 0:
        return M**2 / (2 * spec.alpha)
    return spec.gamma * M


def pc_stationarity_residual(spec, cache):
    """Violation of ``phi v + g'(u; v) >= 0`` over unit tangent directions."""
    p = spec.cost
    u = _effective_control(spec, cache)
    phi = np.asarray(cache.phi)
    up = np.maximum(-phi - pointwise.g_dir1(u, 1.0, p), 0.0)
    down = np.maximum(phi - pointwise.g_dir1(u, -1.0, p), 0.0)
    up = np.where(_at_upper(u, p.gamma), 0.0, up)
    down = np.where(_at_lower(u, p.gamma), 0.0, down)
    residual = np.maximum(up, down)
    return {"max_residual": float(residual.max()), "residual": residual}


def check_pc_sparsity_structure(spec, cache, tol=1e-8):
    """Node-wise support structure of a stationary point of the convexified problem.

    Checks, with ``c = sqrt(2 alpha beta)`` and ``s = sqrt(2 beta/alpha)``:
    ``|phi| < c => u = 0``; ``phi = -c => u in [0, s]``; ``phi = c =>
    u in [-s, 0]``; ``|phi| > c => u = proj(-phi/alpha)``, the last one
    measured as ``alpha |u - proj(-phi/alpha)| <= tol``.  If no node has
    ``|phi| = c`` it also checks ``u != 0 => |u| >= s``.
    """
    p = spec.cost
    if p.regime != INTERIOR_KINK:
        raise ValueError("support structure check needs the interior-kink regime")
    u = _effective_control(spec, cache)
    phi = np.asarray(cache.phi)
    c, s = p.phi_threshold, p.kink
    stol = s * 1e-9
    below = np.abs(phi) < c - TIE_TOL
    tie_neg = np.abs(phi + c) <= TIE_TOL
    tie_pos = np.abs(phi - c) <= TIE_TOL
    above = np.abs(phi) > c + TIE_TOL
    target = np.clip(-phi / p.alpha, -p.gamma, p.gamma)
    v1 = np.flatnonzero(below & (u != 0))
    v2 = np.flatnonzero(tie_neg & ((u < -stol) | (u > s + stol)))
    v3 = np.flatnonzero(tie_pos & ((u > stol) | (u < -s - stol)))
    v4 = np.flatnonzero(above & (p.alpha * np.abs(u - target) > tol))
    ties = tie_neg | tie_pos
    report = {
        "implication_violations": [int(v1.size), int(v2.size), int(v3.size), int(v4.size)],
        "violation_nodes": [v1.tolist(), v2.tolist(), v3.tolist(), v4.tolist()],
        "tie_measure": float(np.count_nonzero(ties)) * spec.grid.cell_volume,
    }
    if not np.any(ties):
        gap = np.flatnonzero((u != 0) & (np.abs(u) < s - stol))
        report["gap_violations"] = int(gap.size)
        report["gap_nodes"] = gap.tolist()
    else:
        report["gap_violations"] = None
    report["violations"] = sum(report["implication_violations"]) + (report["gap_violations"] or 0)
    return report


def _tangent_tags(u, gamma):
    tags = np.full(u.shape, FREE)
    tags[_at_lower(u, gamma)] = NONNEG
    tags[_at_upper(u, gamma)] = NONPOS
    return tags


def _restrict(tags, where, sign):
    """Add a sign restriction, collapsing opposite signs to zero."""
    out = tags.copy()
    clash = where & (out == (NONPOS if sign == NONNEG else NONNEG))
    out[where & (out == FREE)] = sign
    out[clash] = ZERO
    return out


def build_cone(spec, cache, kind, tau=None):
    """Cone mask of the requested kind at the control of ``cache``.

    * ``tangent``: sign restrictions at the box bounds.
    * ``C_u``: critical cone of the original problem, zero where ``u = 0``
      or ``phi + alpha u != 0``.  At a maximum-principle point the second
      set is the bang nodes with ``|phi| > alpha gamma``; that form is used
      because it does not degrade with the square-root accuracy of an
      approximate solution.
    * ``C_pc``: critical cone of the convexified problem.
    * ``D_tau``: enlarged cone, zero where ``|phi| <= c - tau`` or
      ``|phi| >= alpha gamma + tau``; needs ``0 < tau < c``.
    """
    if kind not in CONE_KINDS:
        raise ValueError(f"unknown cone kind {kind!r}")
    p = spec.cost
    u = _effective_control(spec, cache)
    phi = np.asarray(cache.phi)
    tags = _tangent_tags(u, p.gamma)
    c = p.phi_threshold
    if kind == "C_u":
        tol_eq = 1e-8 * (1 + np.max(np.abs(phi)))
        bang = np.abs(phi) > p.alpha * p.gamma + tol_eq
        tags[(u == 0) | bang] = ZERO
        if p.alpha == 0:
            # every nonzero PMP control is bang with |phi| >= beta/gamma > 0
            tags[:] = ZERO
    elif kind == "C_pc":
        zero_at = u == 0
        tags[np.abs(phi) < c - TIE_TOL] = ZERO
        tags = _restrict(tags, zero_at & (np.abs(phi - c) <= TIE_TOL), NONPOS)
        tags = _restrict(tags, zero_at & (np.abs(phi + c) <= TIE_TOL), NONNEG)
        tags[np.abs(phi) > p.alpha * p.gamma + TIE_TOL] = ZERO
    elif kind == "D_tau":
        if tau is None or not 0 < tau < c:
            raise ValueError(f"tau must lie in (0, sqrt(2 alpha beta)) = (0, {c}), got {tau}")
        zero_at = u == 0
        tags = _restrict(tags, zero_at & (np.abs(phi - c) <= TIE_TOL), NONPOS)
        tags = _restrict(tags, zero_at & (np.abs(phi + c) <= TIE_TOL), NONNEG)
        tags[(np.abs(phi) <= c - tau) | (np.abs(phi) >= p.alpha * p.gamma + tau)] = ZERO
    return ConeMask(tags, kind, tau)


def first_order_term(spec, cache, v):
    """``F'(u) v + G'(u; v)``."""
    return spec.grid.inner(cache.phi, v) + spec.grid.integrate(
        pointwise.g_dir1(_effective_control(spec, cache), v, spec.cost)
    )


def in_E_tau(spec, cache, v, tau, atol=1e-8):
    """Membership in ``{v : F'(u) v + G'(u; v) <= tau |z_v|}``.

    ``atol`` (scaled by ``|v|_L1``) absorbs the stationarity tolerance of
    the control.  Returns ``(member, margin)`` with ``margin = tau |z_v| -
    first-order term``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    grid = spec.grid
    first = first_order_term(spec, cache, v)
    zn = grid.norm_l2(cache.linearized(v))
    margin = tau * zn - first
    return bool(margin >= -atol * grid.norm_l1(v)), float(margin)


def growth_set(spec, cache, w, tau):
    """Nodes where ``w`` violates the pointwise conditions defining ``D_tau``."""
    p = spec.cost
    u = _effective_control(spec, cache)
    phi = np.asarray(cache.phi)
    c = p.phi_threshold
    zero_at = u == 0
    neg = zero_at & (np.abs(phi + c) <= TIE_TOL) & (w < 0)
    pos = zero_at & (np.abs(phi - c) <= TIE_TOL) & (w > 0)
    far = (w != 0) & ((np.abs(phi) <= c - tau) | (np.abs(phi) >= p.alpha * p.gamma + tau))
    return neg | pos | far


def first_order_growth_bound(spec, cache, w, tau):
    """Both sides of ``F'(u) w + G'(u; w) >= tau |w|_{L1(Omega_w)}``.

    ``Omega_w`` is :func:`growth_set`.  Requires a stationary control of the
    convexified problem, ``0 < tau < sqrt(2 alpha beta)`` and a tangent ``w``.
    """
    p = spec.cost
    if not 0 < tau < p.phi_threshold:
        raise ValueError("tau must lie in (0, sqrt(2 alpha beta))")
    w = np.asarray(w, dtype=float)
    omega = growth_set(spec, cache, w, tau)
    lhs = first_order_term(spec, cache, w)
    rhs = tau * spec.grid.norm_l1(np.where(omega, w, 0.0))
    return {
        "lhs": lhs,
        "rhs": rhs,
        "slack": lhs - rhs,
        "set_measure": float(np.count_nonzero(omega)) * spec.grid.cell_volume,
    }
