"""Finite-difference elliptic operator and the state/linearized/adjoint solves.

The operator ``-div(kappa grad y)`` with ``y = 0`` on the boundary is
discretized by the 3-point (1D) / 5-point (2D) stencil with harmonic-mean
face coefficients.  The matrix is symmetric, so the adjoint operator is the
operator itself.
"""

import dataclasses

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class NonConvergence(RuntimeError):
    """Newton's method did not reach the residual tolerance."""

    def __init__(self, iterations, residual):
        super().__init__(
            f"Newton did not converge: residual {residual:.3e} after {iterations} iterations"
        )
        self.iterations = iterations
        self.residual = residual


@dataclasses.dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-12
    max_iter: int = 50
    backtrack: float = 0.5
    armijo: float = 1e-4

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("Newton needs at least one iteration")


@dataclasses.dataclass(frozen=True)
class EllipticOperator:
    grid: object
    matrix: sp.csr_matrix
    lambda_a: float

    @property
    def norm_inf(self):
        return float(abs(self.matrix).sum(axis=1).max())


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def assemble_operator(spec):
    """Stiffness matrix of ``-div(kappa grad .)`` on the interior nodes."""
    return spec.cached("operator", lambda: _assemble(spec))


def _assemble(spec):
    grid = spec.grid
    kappa = spec.kappa
    shape = grid.interior_shape
    n = grid.size
    index = np.arange(n).reshape(shape)
    inner = tuple(slice(1, -1) for _ in range(grid.dim))
    k_center = kappa[inner]
    diag = np.zeros(shape)
    rows, cols, vals = [], [], []
    for axis, h in enumerate(grid.spacing):
        for step in (-1, 1):
            shifted = [slice(1, -1)] * grid.dim
            shifted[axis] = slice(1 + step, kappa.shape[axis] - 1 + step)
            face = _harmonic(k_center, kappa[tuple(shifted)]) / h**2
            diag += face
            # couplings to interior neighbours only; boundary values are zero
            src = [slice(None)] * grid.dim
            dst = [slice(None)] * grid.dim
            if step == 1:
                src[axis] = slice(0, shape[axis] - 1)
                dst[axis] = slice(1, shape[axis])
            else:
                src[axis] = slice(1, shape[axis])
                dst[axis] = slice(0, shape[axis] - 1)
            rows.append(index[tuple(src)].ravel())
            cols.append(index[tuple(dst)].ravel())
            vals.append(-face[tuple(src)].ravel())
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag.ravel())
    matrix = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return EllipticOperator(grid, matrix, spec.lambda_a)


def jacobian(spec, y):
    """``A_h + diag(da/dy(., y))``; the Newton matrix and the linearized operator."""
    op = assemble_operator(spec)
    return (op.matrix + sp.diags(spec.nonlinearity.d1(y))).tocsc()


def factorize(spec, y):
    return spla.splu(jacobian(spec, y))


def state_residual(spec, y, u):
    op = assemble_operator(spec)
    return op.matrix @ y + spec.nonlinearity.value(y) - u


def solve_state(spec, u, settings=None, info=False):
    """Solve ``A_h y + a(y) = u`` by damped Newton from ``y = 0``.

    The stopping test is ``max|residual| <= tol``, with ``tol`` raised to the
    floating-point floor ``64 eps (|A||y| + |a(y)| + |u|)`` on fine grids
    where the absolute tolerance is below round-off.  With ``info=True``
    returns ``(y, iterations, residual)``.
    """
    settings = settings or NewtonSettings()
    u = np.asarray(u, dtype=float)
    op = assemble_operator(spec)
    a = spec.nonlinearity
    y = np.zeros(spec.grid.size)
    res = state_residual(spec, y, u)
    eps = np.finfo(float).eps
    for it in range(settings.max_iter + 1):
        rmax = float(np.max(np.abs(res))) if res.size else 0.0
        floor = 64 * eps * (
            op.norm_inf * np.max(np.abs(y)) + np.max(np.abs(a.value(y))) + np.max(np.abs(u))
        )
        if rmax <= max(settings.tol, floor):
            return (y, it, rmax) if info else y
        if it == settings.max_iter:
            break
        step = spla.spsolve(jacobian(spec, y), -res)
        norm0 = np.linalg.norm(res)
        lam = 1.0
        while True:
            trial = y + lam * step
            trial_res = state_residual(spec, trial, u)
            if np.linalg.norm(trial_res) <= (1 - settings.armijo * lam) * norm0 or lam < 1e-10:
                break
            lam *= settings.backtrack
        y, res = trial, trial_res
    raise NonConvergence(settings.max_iter, rmax)


def solve_linearized(spec, y, v, factor=None):
    """Solve ``(A_h + diag(da/dy(y))) z = v``; ``v`` may hold several columns."""
    factor = factor or factorize(spec, y)
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        return factor.solve(np.asfortranarray(v))
    return factor.solve(v)


def solve_adjoint(spec, y, factor=None):
    """Adjoint state: ``(A_h + diag(da/dy(y))) phi = dL/dy(y)``."""
    return solve_linearized(spec, y, spec.objective.d1(y), factor)


def estimate_cz(spec, y, trials, rng=None):
    """Empirical constant in ``||z_v||_L2 <= C_z ||v||_L1``.

    Half of the trial directions are single-node spikes (which realize the
    operator norm from L1 to L2 column by column), the rest are Gaussian.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng)
    grid = spec.grid
    factor = factorize(spec, y)
    best = 0.0
    for k in range(trials):
        if k % 2 == 0:
            v = np.zeros(grid.size)
            v[rng.integers(grid.size)] = 1.0
        else:
            v = rng.standard_normal(grid.size)
        z = solve_linearized(spec, y, v, factor)
        best = max(best, grid.norm_l2(z) / grid.norm_l1(v))
    return best
