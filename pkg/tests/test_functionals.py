import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from l0control import functionals, pde
from l0control.problem import build_problem

from conftest import small_spec


def linear_spec(target=0.0, interior=63, c0=0.0):
    return build_problem(
        {
            "dim": 1,
            "nodes": interior + 2,
            "kappa": 1.0,
            "nonlinearity": "linear",
            "c0": c0,
            "target": target,
            "alpha": 1.0,
            "beta": 1.0,
            "gamma": 10.0,
        }
    )


class TestEvaluate:
    def test_all_zero_problem(self):
        cache = functionals.evaluate(linear_spec(), np.zeros(63))
        assert cache.F == 0 and cache.J == 0 and cache.J_pc == 0

    def test_unit_target_quadrature(self):
        n = 63
        cache = functionals.evaluate(linear_spec(target=1.0), np.zeros(n))
        assert cache.F == pytest.approx(0.5 * n / (n + 1), rel=1e-14)

    def test_parts_add_up(self, rng):
        spec = small_spec(31)
        u = np.where(rng.uniform(size=31) < 0.5, 0.0, rng.uniform(-5, 5, 31))
        cache = functionals.evaluate(spec, u)
        grid = spec.grid
        J = cache.F + 0.5 * spec.cost.alpha * grid.inner(u, u) + spec.cost.beta * np.count_nonzero(u) * grid.cell_volume
        assert cache.J == pytest.approx(J, rel=1e-12)
        assert cache.J >= 0
        assert cache.J_pc <= cache.J + 1e-14

    def test_state_and_adjoint_satisfy_equations(self, rng):
        spec = small_spec(31)
        cache = functionals.evaluate(spec, rng.uniform(-3, 3, 31))
        A = pde.assemble_operator(spec).matrix
        a = spec.nonlinearity
        assert np.max(np.abs(A @ cache.y + a.value(cache.y) - cache.u)) <= 1e-8
        K = A + sp.diags(a.d1(cache.y))
        np.testing.assert_allclose(K @ cache.phi, cache.y - spec.objective.target, atol=1e-10)

    def test_fields_are_read_only(self):
        cache = functionals.evaluate(small_spec(), np.zeros(15))
        with pytest.raises(ValueError):
            cache.phi[0] = 1.0


class TestGradient:
    def test_zero_when_state_hits_target(self):
        # u = 0 gives y = 0, which equals a zero target
        cache = functionals.evaluate(small_spec(31, target=0.0), np.zeros(31))
        np.testing.assert_array_equal(functionals.grad_F(cache), 0.0)

    def test_linear_closed_form(self, rng):
        spec = linear_spec(target="sin(pi*x)")
        u = rng.standard_normal(63)
        A = pde.assemble_operator(spec).matrix.tocsc()
        expected = spla.spsolve(A, spla.spsolve(A, u) - spec.objective.target)
        grad = functionals.grad_F(functionals.evaluate(spec, u))
        assert np.max(np.abs(grad - expected)) <= 1e-10 * np.max(np.abs(expected))

    def test_matches_central_differences(self, rng):
        spec = linear_spec(target="sin(pi*x)")
        u = rng.standard_normal(63)
        cache = functionals.evaluate(spec, u)
        t = 1e-5
        for _ in range(10):
            v = rng.standard_normal(63)
            fd = (functionals.evaluate(spec, u + t * v).F - functionals.evaluate(spec, u - t * v).F) / (2 * t)
            exact = spec.grid.inner(functionals.grad_F(cache), v)
            assert abs(fd - exact) <= 1e-6 * abs(exact)


class TestHessian:
    def test_linear_is_state_norm(self, rng):
        spec = linear_spec(target=1.0)
        cache = functionals.evaluate(spec, rng.standard_normal(63))
        v = rng.standard_normal(63)
        z = cache.linearized(v)
        assert functionals.hess_F_apply(cache, v, v) == pytest.approx(spec.grid.inner(z, z), rel=1e-13)

    def test_symmetric(self, rng):
        spec = small_spec(31)
        cache = functionals.evaluate(spec, rng.uniform(-5, 5, 31))
        v1, v2 = rng.standard_normal((2, 31))
        assert abs(functionals.hess_F_apply(cache, v1, v2) - functionals.hess_F_apply(cache, v2, v1)) <= 1e-12

    def test_dense_forms_agree_with_apply(self, rng):
        spec = small_spec(31)
        cache = functionals.evaluate(spec, rng.uniform(-5, 5, 31))
        H, M = functionals.dense_forms(cache)
        v = rng.standard_normal(31)
        z = cache.linearized(v)
        assert v @ H @ v == pytest.approx(functionals.hess_F_apply(cache, v, v), rel=1e-10)
        assert v @ M @ v == pytest.approx(spec.grid.inner(z, z), rel=1e-10)

    def test_dense_forms_on_subset(self, rng):
        spec = small_spec(31)
        cache = functionals.evaluate(spec, np.zeros(31))
        nodes = np.array([2, 5, 11])
        H_sub, _ = functionals.dense_forms(cache, nodes)
        H, _ = functionals.dense_forms(cache)
        np.testing.assert_allclose(H_sub, H[np.ix_(nodes, nodes)], atol=1e-14)

    def test_second_differences(self, rng):
        spec = linear_spec(target="sin(pi*x)")
        u = rng.standard_normal(63)
        cache = functionals.evaluate(spec, u)
        t = 1e-3
        for _ in range(10):
            v = rng.standard_normal(63)
            F = [functionals.evaluate(spec, u + k * t * v).F for k in (-1, 0, 1)]
            fd = (F[0] - 2 * F[1] + F[2]) / t**2
            exact = functionals.hess_F_apply(cache, v, v)
            assert abs(fd - exact) <= 1e-4 * abs(exact)


class TestEnvelopeFunctional:
    def test_zero_control(self, rng):
        spec = small_spec(31)
        v = rng.standard_normal(31)
        assert functionals.eval_G(spec, np.zeros(31)) == 0
        expected = spec.cost.phi_threshold * spec.grid.norm_l1(v)
        assert functionals.G_dir1(spec, np.zeros(31), v) == pytest.approx(expected, rel=1e-14)

    def test_below_cost_and_ordering(self, rng):
        spec = small_spec(31, alpha=1.0, beta=2.0)
        grid = spec.grid
        p = spec.cost
        for _ in range(100):
            u = np.where(rng.uniform(size=31) < 0.3, 0.0, rng.uniform(-10, 10, 31))
            v = rng.standard_normal(31)
            cost = 0.5 * p.alpha * grid.inner(u, u) + p.beta * grid.cell_volume * np.count_nonzero(u)
            assert functionals.eval_G(spec, u) <= cost + 1e-12
            gt = functionals.G_tilde(spec, u, v)
            g2 = functionals.G_dir2(spec, u, v)
            assert 0 <= gt <= g2 <= p.alpha * grid.inner(v, v) + 1e-12


class TestProbes:
    def test_lipschitz_linear_ratio_depends_only_on_direction(self):
        spec = linear_spec(target=1.0)
        runs = [
            functionals.probe_lipschitz_F1(spec, ubar, radius, 20, rng=7)
            for ubar, radius in ((np.zeros(63), 1e-3), (np.ones(63), 1e-1), (np.full(63, -4.0), 1.0))
        ]
        ratios = np.array([r["ratios"] for r in runs])
        assert np.max(np.var(ratios, axis=0)) <= 1e-8
        # bounded by the operator norm of the inverse
        A = pde.assemble_operator(spec).matrix.tocsc()
        lam = spla.eigsh(A, k=1, sigma=0, return_eigenvectors=False)[0]
        assert all(r["max_ratio"] <= 1 / lam + 1e-12 and r["bounded"] for r in runs)

    def test_lipschitz_bounded_for_cubic(self):
        spec = small_spec(31)
        small = functionals.probe_lipschitz_F1(spec, np.zeros(31), 1e-4, 10, rng=1)
        assert small["bounded"] and small["max_ratio"] < 1.0

    def test_hessian_constant_for_linear(self):
        report = functionals.probe_hess_continuity(linear_spec(target=1.0), np.zeros(63), 1.0, 5, rng=2)
        assert report["max_ratio"] <= 1e-12

    def test_hessian_ratio_grows_with_radius(self, standard_1d):
        spec = standard_1d
        ubar = np.zeros(spec.grid.size)
        near = functionals.probe_hess_continuity(spec, ubar, 1e-3, 5, rng=3)
        far = functionals.probe_hess_continuity(spec, ubar, 1e-1, 5, rng=3)
        assert far["max_ratio"] >= 5 * near["max_ratio"]

    @pytest.mark.parametrize("probe", [functionals.probe_lipschitz_F1, functionals.probe_hess_continuity])
    def test_needs_trials(self, probe):
        with pytest.raises(ValueError):
            probe(small_spec(), np.zeros(15), 0.1, 0)

    def test_needs_positive_radius(self):
        with pytest.raises(ValueError):
            functionals.probe_lipschitz_F1(small_spec(), np.zeros(15), 0.0, 3)

    def test_standard_instance_is_cubic(self, standard_1d):
        assert standard_1d.nonlinearity.family == "cubic"
