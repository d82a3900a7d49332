from types import SimpleNamespace

import numpy as np
import pytest

from l0control import functionals, instances, optimality, soc, solver
from l0control.optimality import ZERO, ConeMask


@pytest.fixture(scope="module")
def sufficient_1d(standard_1d, l0_solution_1d):
    cache = l0_solution_1d[2]
    return cache, soc.check_sufficient_soc(standard_1d, cache, 1e-3, rng=0)


@pytest.fixture(scope="module")
def lq_1d():
    spec = instances.linear_quadratic_problem(1)
    u, _ = solver.solve_l0(spec)
    return spec, functionals.evaluate(spec, u)


class TestForms:
    def test_symmetric_and_positive_for_linear(self, lq_1d):
        spec, cache = lq_1d
        mask = ConeMask(np.full(spec.grid.size, optimality.FREE), "tangent")
        forms = soc.assemble_forms(spec, cache, mask, "necessary")
        assert forms.symmetry_defect() <= 1e-12
        assert np.linalg.eigvalsh(forms.Q)[0] > 0
        assert forms.dimension == spec.grid.size

    def test_trivial_cone(self, lq_1d):
        spec, cache = lq_1d
        mask = ConeMask(np.full(spec.grid.size, ZERO), "C_u")
        assert soc.assemble_forms(spec, cache, mask, "sufficient") is None

    def test_unknown_form(self, lq_1d):
        spec, cache = lq_1d
        with pytest.raises(ValueError):
            soc.assemble_forms(spec, cache, optimality.build_cone(spec, cache, "C_u"), "third")

    def test_eigen_methods_agree(self, rng):
        A = rng.standard_normal((30, 30))
        B = rng.standard_normal((30, 30))
        Q, M = A + A.T, B @ B.T + 30 * np.eye(30)
        lam, x = soc.generalized_min_eig(Q, M)
        assert abs(lam - soc.rayleigh_min(Q, M, rng=1)) <= 1e-8 * abs(lam)
        assert (x @ Q @ x) / (x @ M @ x) == pytest.approx(lam, rel=1e-10)

    def test_dropping_cost_term_lowers_eigenvalue(self, standard_1d, sufficient_1d):
        cache, _ = sufficient_1d
        mask = optimality.build_cone(standard_1d, cache, "D_tau", 1e-3)
        with_term = soc.assemble_forms(standard_1d, cache, mask, "sufficient", gtilde="upper")
        without = soc.assemble_forms(standard_1d, cache, mask, "sufficient", gtilde="none")
        lam_with = soc.generalized_min_eig(with_term.Q, with_term.M)[0]
        lam_without = soc.generalized_min_eig(without.Q, without.M)[0]
        assert lam_without < lam_with


class TestNecessary:
    def test_alpha_zero_is_vacuous(self):
        spec = instances.standard_problem(1, nodes=33, alpha=0.0, gamma=1.0)
        cache = functionals.evaluate(spec, np.zeros(31))
        report = soc.check_necessary_soc(spec, cache)
        assert report.verdict == soc.NECESSARY_HOLDS and report.dimension == 0

    def test_linear_quadratic_bound(self, lq_1d):
        spec, cache = lq_1d
        report = soc.check_necessary_soc(spec, cache, rng=0)
        assert report.verdict == soc.NECESSARY_HOLDS
        assert report.dimension > 0
        assert report.lambda_min_plain >= spec.alpha * spec.grid.cell_volume

    def test_concave_instance_fails(self):
        spec, u, phi = instances.concave_stationary_instance()
        cache = functionals.evaluate(spec, u)
        np.testing.assert_allclose(cache.phi, phi, atol=1e-8 * np.max(np.abs(phi)))
        report = soc.check_necessary_soc(spec, cache, rng=0)
        assert report.verdict == soc.NECESSARY_FAILS
        assert report.lambda_min < 0
        assert optimality.build_cone(spec, cache, "C_u").contains(report.witness)
        assert report.refinement["witness_second_difference"] < 0

    def test_standard_solution_holds(self, standard_1d, l0_solution_1d):
        report = soc.check_necessary_soc(standard_1d, l0_solution_1d[2], rng=0)
        assert report.verdict == soc.NECESSARY_HOLDS
        assert report.eigen_agreement <= 1e-6


class TestSufficient:
    def test_vacuous_above_threshold(self):
        # a wide box keeps beta slightly above the threshold in the interior-kink regime
        spec = instances.standard_problem(1, gamma=30.0)
        cache0 = functionals.evaluate(spec, np.zeros(spec.grid.size))
        spec = spec.replace(beta=1.01 * optimality.beta_star(spec, cache0))
        assert spec.cost.regime == "interior-kink"
        cache = functionals.evaluate(spec, np.zeros(spec.grid.size))
        tau = 0.5 * (spec.cost.phi_threshold - np.max(np.abs(cache.phi)))
        report = soc.check_sufficient_soc(spec, cache, tau, rng=0)
        assert report.verdict == soc.SUFFICIENT_HOLDS and report.dimension == 0

    def test_l1_regime_is_delegated(self):
        spec = instances.standard_problem(1, nodes=17, gamma=1.0)
        cache = functionals.evaluate(spec, np.zeros(15))
        assert soc.check_sufficient_soc(spec, cache, 1e-3).verdict == soc.DELEGATED

    def test_standard_solution_holds(self, sufficient_1d):
        _, report = sufficient_1d
        assert report.verdict == soc.SUFFICIENT_HOLDS
        assert report.delta > 0 and report.kappa == report.delta / 8
        assert report.eigen_agreement <= 1e-6
        assert report.rho > 0
        assert report.to_dict()["has_witness"] is False


class TestGrowth:
    def test_no_violations_on_holding_problem(self, standard_1d, sufficient_1d):
        cache, report = sufficient_1d
        growth = soc.measure_quadratic_growth(standard_1d, cache, report.rho, 200, rng=0)
        assert growth["violations_J"] == 0 and growth["violations_pc"] == 0
        assert growth["kappa_J"] > 0
        assert growth["J_below_J_pc_ratio"] == 0

    def test_extra_directions_add_both_signs(self, standard_1d, sufficient_1d):
        cache, _ = sufficient_1d
        d = np.zeros(standard_1d.grid.size)
        d[100] = 1.0
        growth = soc.measure_quadratic_growth(standard_1d, cache, 1e-3, 1, rng=0, directions=[d])
        assert growth["samples"] == 3

    @pytest.mark.parametrize("rho, trials", [(0.0, 3), (0.1, 0)])
    def test_arguments(self, standard_1d, sufficient_1d, rho, trials):
        with pytest.raises(ValueError):
            soc.measure_quadratic_growth(standard_1d, sufficient_1d[0], rho, trials)


class TestIsolatedProbe:
    def test_convex_problem_converges_to_one_point(self, lq_1d):
        spec, _ = lq_1d
        u, _ = solver.solve_pc(spec)
        cache = functionals.evaluate(spec, u)
        report = soc.isolated_stationarity_probe(spec, cache, 0.5, 3, rng=0)
        assert report["passed"]
        assert len(report["distinct_limits"]) == 1

    def test_standard_solution_passes(self, standard_1d, sufficient_1d):
        cache, report = sufficient_1d
        probe = soc.isolated_stationarity_probe(standard_1d, cache, report.rho, 2, rng=0)
        assert probe["passed"]

    def test_two_wells_are_both_found(self):
        spec = instances.two_well_instance()
        u, _ = solver.solve_pc(spec, np.array([40.0]), solver.SolverSettings(tol=1e-11))
        cache = functionals.evaluate(spec, u)
        # radius in L2 of the single cell (volume 1/2) reaching the second well
        rho = 300.0 * np.sqrt(0.5)
        report = soc.isolated_stationarity_probe(spec, cache, rho, 12, rng=3)
        assert not report["passed"]
        limits = sorted(float(w[0]) for w in report["distinct_limits"])
        assert len(limits) >= 2
        assert limits[0] == pytest.approx(49.6, abs=0.1)
        assert limits[-1] == pytest.approx(317.4, abs=0.1)


class TestBilinearForms:
    def test_gap_is_nonnegative_with_strict_witness(self, standard_1d, l0_solution_1d):
        report = soc.compare_bilinear_forms(standard_1d, l0_solution_1d[2], trials=200, rng=0)
        assert report["min_gap"] >= 0
        assert report["strict_gap_samples"] > 0

    def test_gap_comes_from_unmatched_nodes(self, standard_1d, l0_solution_1d, rng):
        cache = l0_solution_1d[2]
        p = standard_1d.cost
        u = cache.u
        v = rng.standard_normal(standard_1d.grid.size)
        on_quad = np.abs(u) >= p.kink
        v[on_quad] = np.abs(v[on_quad]) * np.sign(u[on_quad])
        gap = p.alpha * v * v - soc.pointwise.gtilde_scalar(u, v, p)
        expected = p.alpha * v**2 * ~on_quad
        np.testing.assert_allclose(gap, expected, atol=1e-15)

    def test_trivial_cone(self):
        spec = instances.standard_problem(1, nodes=17)
        cache = functionals.evaluate(spec, np.zeros(15))
        report = soc.compare_bilinear_forms(spec, cache, trials=5)
        assert report["trivial_cone"] and report["min_gap"] == 0


class TestStructural:
    @staticmethod
    def linear_profile(spec, slope):
        x = spec.grid.coordinates()["x"]
        return SimpleNamespace(u=np.zeros(spec.grid.size), phi=slope * (x - 0.5))

    def test_vacuous_without_nearby_adjoint(self):
        spec = instances.standard_problem(1, nodes=65)
        cache = SimpleNamespace(u=np.zeros(63), phi=np.zeros(63))
        report = soc.structural_assumption_estimate(spec, cache)
        assert report["c_sup"] == 0 and report["band_measures"] == [0.0] * 12
        assert report["kappa"] is None and "vacuously" in report["status"]

    def test_linear_profile(self):
        spec = instances.standard_problem(1, nodes=4097)
        c = spec.cost.phi_threshold
        # |phi| peaks at the domain ends just below the threshold
        slope = 2 * 0.9999 * c
        cache = self.linear_profile(spec, slope)
        eps = c * np.array([0.05, 0.1, 0.2])
        report = soc.structural_assumption_estimate(spec, cache, eps_grid=eps, trials=200, rng=0)
        measures = np.array(report["band_measures"])
        # both flanks of the profile contribute eps / slope each
        np.testing.assert_allclose(measures, 2 * (eps - 1e-4 * c) / slope, rtol=0.02)
        assert report["c_fit"] == pytest.approx(2 / slope, rel=0.05)
        assert report["min_slack"] >= -1e-9

    def test_threshold_attained(self):
        spec = instances.standard_problem(1, nodes=65)
        cache = SimpleNamespace(u=np.zeros(63), phi=np.full(63, spec.cost.phi_threshold))
        assert "fails" in soc.structural_assumption_estimate(spec, cache)["status"]

    def test_standard_solution(self, standard_1d, l0_solution_1d):
        report = soc.structural_assumption_estimate(standard_1d, l0_solution_1d[2], trials=100, rng=0)
        assert report["c_sup"] >= report["c_fit"] > 0
        assert report["min_slack"] >= -1e-9

    def test_needs_finite_box(self):
        spec = instances.standard_problem(1, nodes=17, gamma="inf")
        with pytest.raises(ValueError):
            soc.structural_assumption_estimate(spec, SimpleNamespace(u=np.zeros(15), phi=np.zeros(15)))
