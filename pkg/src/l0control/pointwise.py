"""Scalar (per-node) mathematics of the sparse control cost.

The pointwise cost is ``j0(u) = alpha/2 u^2 + beta |u|_0`` on
``[-gamma, gamma]``.  Its convex envelope ``g`` has two regimes:

* interior kink (``alpha > 0`` and ``s = sqrt(2 beta / alpha) < gamma``):
  ``g(u) = sqrt(2 alpha beta) |u|`` for ``|u| < s`` and ``j0(u)`` otherwise;
* l1 regime (otherwise): ``g(u) = (alpha gamma / 2 + beta / gamma) |u|``.

All functions broadcast over numpy arrays unless they return sets.
``sign(0) = 0`` throughout.
"""

import dataclasses
import math

import numpy as np

INTERIOR_KINK = "interior-kink"
L1_REGIME = "l1-regime"

# relative tolerance for deciding that |u| sits exactly on the kink
KINK_RTOL = 1e-12
# relative tolerance for value ties in the scalar minimizations
TIE_RTOL = 1e-12


@dataclasses.dataclass(frozen=True)
class CostParams:
    alpha: float
    beta: float
    gamma: float = math.inf

    def __post_init__(self):
        alpha, beta, gamma = float(self.alpha), float(self.beta), float(self.gamma)
        if not alpha >= 0 or math.isinf(alpha):
            raise ValueError(f"alpha must be finite and >= 0, got {alpha}")
        if not beta > 0 or math.isinf(beta):
            raise ValueError(f"beta must be finite and > 0, got {beta}")
        if not gamma > 0:
            raise ValueError(f"gamma must be > 0, got {gamma}")
        if alpha == 0 and math.isinf(gamma):
            raise ValueError("gamma must be finite when alpha = 0 (unbounded problem)")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def kink(self):
        """``s = sqrt(2 beta / alpha)``; infinite for ``alpha = 0``."""
        return math.sqrt(2 * self.beta / self.alpha) if self.alpha > 0 else math.inf

    @property
    def phi_threshold(self):
        """``sqrt(2 alpha beta)``, the adjoint level that switches the support."""
        return math.sqrt(2 * self.alpha * self.beta)

    @property
    def bang_threshold(self):
        """``alpha gamma / 2 + beta / gamma``."""
        return self.alpha * self.gamma / 2 + self.beta / self.gamma

    @property
    def regime(self):
        return INTERIOR_KINK if self.kink < self.gamma else L1_REGIME

    @property
    def l1_slope(self):
        """Slope of ``g`` in the l1 regime."""
        return self.bang_threshold

    def threshold_gap(self):
        """``alpha gamma/2 + beta/gamma - sqrt(2 alpha beta)``, always >= 0."""
        return self.bang_threshold - self.phi_threshold


@dataclasses.dataclass(frozen=True)
class ScalarCaseResult:
    """Global minimizers of the pointwise Hamiltonian and the active case.

    For ``alpha > 0`` the case is an integer 1..6 (bang beats zero, bang ties
    zero, zero beats bang, interior beats zero, interior ties zero, zero).
    For ``alpha = 0`` it is one of ``neg-bang``, ``zero``, ``pos-bang``,
    ``tie``.
    """

    minimizers: tuple
    case: object

    @property
    def is_tie(self):
        return len(self.minimizers) == 2


def _tie_tol(*scales):
    return TIE_RTOL * max(1.0, *(abs(float(s)) for s in scales))


def j0_scalar(u, p):
    u = np.asarray(u, dtype=float)
    return 0.5 * p.alpha * u**2 + p.beta * (u != 0)


def hamiltonian(u, phi, p):
    """Control-dependent part ``phi u + alpha/2 u^2 + beta |u|_0``."""
    return phi * np.asarray(u, dtype=float) + j0_scalar(u, p)


def _branch(phi, p):
    """Best nonzero candidate of the Hamiltonian and its value (vectorized)."""
    phi = np.asarray(phi, dtype=float)
    gamma = p.gamma
    if p.alpha > 0:
        with np.errstate(over="ignore"):
            u = np.clip(-phi / p.alpha, -gamma, gamma)
    else:
        u = -np.sign(phi) * gamma
        # phi == 0 gives u == 0 which is not a nonzero candidate; use +gamma
        u = np.where(u == 0, gamma, u)
    value = phi * u + 0.5 * p.alpha * u**2 + p.beta
    return u, value


def hamiltonian_argmin(phi, p):
    """All global minimizers of ``u -> phi u + j0(u)`` over ``[-gamma, gamma]``."""
    phi = float(phi)
    u, value = _branch(phi, p)
    u, value = float(u), float(value)
    tol = _tie_tol(p.beta, phi * u)
    if p.alpha == 0:
        if value < -tol:
            return ScalarCaseResult((u,), "neg-bang" if u < 0 else "pos-bang")
        if value <= tol:
            return ScalarCaseResult((0.0, u), "tie")
        return ScalarCaseResult((0.0,), "zero")
    bang = abs(phi) >= p.alpha * p.gamma
    if value < -tol:
        return ScalarCaseResult((u,), 1 if bang else 4)
    if value <= tol and u != 0:
        return ScalarCaseResult((0.0, u), 2 if bang else 5)
    return ScalarCaseResult((0.0,), 3 if bang else 6)


def hamiltonian_min(phi, p):
    """Vectorized minimizer (ties resolved to 0) and minimal value."""
    u, value = _branch(phi, p)
    tol = TIE_RTOL * np.maximum(1.0, np.maximum(p.beta, np.abs(phi * u)))
    take = value < -tol
    return np.where(take, u, 0.0), np.where(take, value, 0.0)


def g_scalar(u, p):
    u = np.abs(np.asarray(u, dtype=float))
    if p.regime == L1_REGIME:
        return p.l1_slope * u
    return np.where(u < p.kink, p.phi_threshold * u, 0.5 * p.alpha * u**2 + p.beta)


def _on_quadratic(u, p):
    """``|u| >= s`` with the kink itself counted, up to ``KINK_RTOL``."""
    return np.abs(u) >= p.kink * (1 - KINK_RTOL)


def _at_kink(u, p):
    return np.abs(np.abs(u) - p.kink) <= KINK_RTOL * p.kink


def _require_kink(p):
    if p.regime != INTERIOR_KINK:
        raise ValueError("second-order quantities are only defined in the interior-kink regime")


def g_dir1(u, v, p):
    """Directional derivative ``g'(u; v)``."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if p.regime == L1_REGIME:
        return p.l1_slope * np.where(u == 0, np.abs(v), np.sign(u) * v)
    c = p.phi_threshold
    return np.where(
        _on_quadratic(u, p),
        p.alpha * u * v,
        np.where(u == 0, c * np.abs(v), c * np.sign(u) * v),
    )


def g_dir2(u, h, p):
    """One-sided second derivative ``g''(u; h^2)``."""
    _require_kink(p)
    u = np.asarray(u, dtype=float)
    h = np.asarray(h, dtype=float)
    at = _at_kink(u, p)
    active = (np.abs(u) > p.kink) & ~at
    active |= at & (u > 0) & (h >= 0)
    active |= at & (u < 0) & (h <= 0)
    return np.where(active, p.alpha * h**2, 0.0)


def gtilde_scalar(u, v, p):
    """Sign-restricted quadratic term ``alpha v^2 [|u| >= s, sign v = sign u]``."""
    _require_kink(p)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    match = _on_quadratic(u, p) & (np.sign(v) == np.sign(u)) & (v != 0)
    return np.where(match, p.alpha * v**2, 0.0)


def taylor_remainder(u, h, p):
    """``g(u+h) - g(u) - g'(u;h) - g''(u;h^2)/2``."""
    return g_scalar(u + h, p) - g_scalar(u, p) - g_dir1(u, h, p) - 0.5 * g_dir2(u, h, p)


def remainder_lower_bound(u, h, p):
    """Lower bound of :func:`taylor_remainder` away from the quadratic branch.

    Zero for ``|u| <= s``; ``-alpha/2 [(s - |u+h|)_+]^2`` for ``|u| > s``.
    """
    _require_kink(p)
    u = np.asarray(u, dtype=float)
    gap = np.maximum(p.kink - np.abs(u + h), 0.0)
    return np.where(np.abs(u) > p.kink, -0.5 * p.alpha * gap**2, 0.0)


def convex_envelope_oracle(p, samples):
    """Lower convex hull of ``j0`` sampled on ``[-gamma, gamma]``.

    Test oracle only.  Uses the monotone-chain construction on ``samples``
    equispaced points (forced odd so that ``u = 0`` is a sample) and returns
    the piecewise-linear interpolant of the hull vertices.
    """
    if math.isinf(p.gamma):
        raise ValueError("hull oracle needs a finite gamma")
    if samples < 1000:
        raise ValueError("use at least 1000 samples")
    samples = samples | 1
    xs = np.linspace(-p.gamma, p.gamma, samples)
    xs[samples // 2] = 0.0
    ys = j0_scalar(xs, p)
    hull_x, hull_y = [], []
    for x, y in zip(xs.tolist(), ys.tolist()):
        while len(hull_x) >= 2:
            x1, y1 = hull_x[-2], hull_y[-2]
            x2, y2 = hull_x[-1], hull_y[-1]
            if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) <= 0:
                hull_x.pop()
                hull_y.pop()
            else:
                break
        hull_x.append(x)
        hull_y.append(y)
    hx, hy = np.array(hull_x), np.array(hull_y)

    def envelope(u):
        return np.interp(u, hx, hy)

    envelope.vertices = (hx, hy)
    envelope.samples = (xs, ys)
    return envelope


def prox_j0(w, t, p):
    """All minimizers of ``(v-w)^2/(2t) + j0(v)`` over ``[-gamma, gamma]``."""
    if not t > 0:
        raise ValueError("prox step must be positive")
    w = float(w)
    v = min(max(w / (1 + t * p.alpha), -p.gamma), p.gamma)
    cost0 = w * w / (2 * t)
    cost1 = (v - w) ** 2 / (2 * t) + 0.5 * p.alpha * v * v + p.beta
    tol = _tie_tol(cost0, p.beta)
    if v == 0 or cost1 > cost0 + tol:
        return (0.0,)
    if cost1 < cost0 - tol:
        return (v,)
    return (0.0, v)


def prox_j0_field(w, t, p):
    """Vectorized :func:`prox_j0` with ties resolved to 0."""
    w = np.asarray(w, dtype=float)
    v = np.clip(w / (1 + t * p.alpha), -p.gamma, p.gamma)
    cost0 = w * w / (2 * t)
    cost1 = (v - w) ** 2 / (2 * t) + 0.5 * p.alpha * v * v + p.beta
    tol = TIE_RTOL * np.maximum(1.0, np.maximum(cost0, p.beta))
    return np.where(cost1 < cost0 - tol, v, 0.0)


def prox_g(w, t, p):
    """Minimizer of ``(v-w)^2/(2t) + g(v)`` over ``[-gamma, gamma]``.

    Works on ``|w|`` and restores the sign.  The candidates are the
    stationary points of the smooth pieces of ``g`` clipped to their pieces,
    plus the breakpoints ``0, s, gamma``; the objective is strictly convex so
    the best candidate is the minimizer.
    """
    if not t > 0:
        raise ValueError("prox step must be positive")
    w = np.asarray(w, dtype=float)
    sign = np.sign(w)
    a = np.abs(w)
    gamma = p.gamma
    if p.regime == L1_REGIME:
        v = np.minimum(np.maximum(a - t * p.l1_slope, 0.0), gamma)
        return sign * v
    s = p.kink
    c = p.phi_threshold
    cands = np.stack(
        [
            np.zeros_like(a),
            np.clip(a - t * c, 0.0, s),
            np.clip(a / (1 + t * p.alpha), s, gamma),
            np.full_like(a, s),
            np.full_like(a, min(gamma, np.finfo(float).max)),
        ]
    )
    if math.isinf(gamma):
        cands = cands[:4]
    cost = (cands - a) ** 2 / (2 * t) + g_scalar(cands, p)
    best = np.take_along_axis(cands, np.argmin(cost, axis=0)[None], axis=0)[0]
    return sign * best
