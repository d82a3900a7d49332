import csv

import numpy as np
import pytest

from l0control import functionals, instances, optimality, pde, solver
from l0control.solver import SolverSettings


class TestSettings:
    @pytest.mark.parametrize(
        "kwargs", [dict(max_iter=0), dict(tol=0.0), dict(step=-1.0), dict(margin=0.5)]
    )
    def test_rejected(self, kwargs):
        with pytest.raises(ValueError):
            SolverSettings(**kwargs)

    def test_unknown_kind(self, standard_1d):
        with pytest.raises(ValueError):
            solver.solve(standard_1d, "l1")


class TestConvexified:
    def test_certificate(self, standard_1d, pc_solution_1d):
        u, trace, cache = pc_solution_1d
        assert trace.converged
        assert optimality.pc_stationarity_residual(standard_1d, cache)["max_residual"] <= 1e-8
        assert optimality.check_pc_sparsity_structure(standard_1d, cache)["violations"] == 0
        assert np.all(np.abs(u) <= standard_1d.gamma)

    def test_objective_is_monotone(self, pc_solution_1d):
        J = np.array(pc_solution_1d[1].objective_pc)
        assert np.all(np.diff(J) <= 64 * np.finfo(float).eps * np.maximum(1, np.abs(J[:-1])))

    def test_zero_above_threshold(self):
        spec = instances.standard_problem(1, nodes=65)
        cache0 = functionals.evaluate(spec, np.zeros(63))
        spec = spec.replace(beta=1.01 * optimality.beta_star(spec, cache0))
        u, _ = solver.solve_pc(spec, np.random.default_rng(0).uniform(-5, 5, 63))
        np.testing.assert_array_equal(u, 0.0)

    def test_restriction(self, standard_1d):
        allowed = np.zeros(standard_1d.grid.size, dtype=bool)
        allowed[100:150] = True
        u, _ = solver.solve_pc(standard_1d, settings=SolverSettings(restrict=allowed))
        assert np.all(u[~allowed] == 0)

    def test_iteration_limit(self, standard_1d):
        with pytest.raises(solver.MaxIterations) as info:
            solver.solve_pc(standard_1d, settings=SolverSettings(max_iter=2))
        assert info.value.u.shape == (standard_1d.grid.size,)
        assert info.value.trace.iterations == 2


class TestSparse:
    def test_certificate(self, standard_1d, l0_solution_1d):
        u, trace, cache = l0_solution_1d
        assert trace.converged
        pmp = optimality.pmp_residual(standard_1d, cache)
        assert pmp.max_residual <= 1e-8
        assert pmp.sparsity_violations == 0
        assert np.all(solver.envelope_defect(standard_1d, u) <= 1e-12 * np.maximum(1, np.abs(u) ** 2))

    def test_objective_is_monotone(self, l0_solution_1d):
        J = np.array(l0_solution_1d[1].objective)
        assert np.all(np.diff(J) <= 64 * np.finfo(float).eps * np.maximum(1, np.abs(J[:-1])))

    def test_not_worse_than_convexified(self, l0_solution_1d, pc_solution_1d):
        assert l0_solution_1d[2].J <= pc_solution_1d[2].J + 1e-10

    def test_l1_regime_cycles(self):
        spec = instances.standard_problem(1, nodes=65, beta=1.0)
        assert spec.cost.regime == "l1-regime"
        with pytest.raises(solver.Cycling) as info:
            solver.solve_l0(spec)
        assert info.value.period >= 1

    def test_zero_start_is_kept_above_threshold(self):
        spec = instances.strong_target_problem(1)
        cache0 = functionals.evaluate(spec, np.zeros(spec.grid.size))
        spec = spec.replace(beta=1.01 * optimality.beta_star(spec, cache0))
        rng = np.random.default_rng(5)
        for _ in range(3):
            u, _ = solver.solve_l0(spec, rng.uniform(-20, 20, spec.grid.size))
            np.testing.assert_array_equal(u, 0.0)

    def test_nonzero_below_threshold(self):
        spec = instances.strong_target_problem(1)
        cache0 = functionals.evaluate(spec, np.zeros(spec.grid.size))
        spec = spec.replace(beta=0.5 * optimality.beta_star(spec, cache0))
        u, _ = solver.solve_l0(spec)
        assert np.count_nonzero(u) > 0

    def test_trace_csv(self, tmp_path, l0_solution_1d):
        trace = l0_solution_1d[1]
        trace.to_csv(tmp_path / "trace.csv")
        with open(tmp_path / "trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(trace.residual)
        assert float(rows[-1]["J"]) == trace.objective[-1]
        assert trace.summary()["iterations"] == trace.iterations


class TestTransfer:
    def test_standard_problem(self, standard_1d):
        report = solver.solve_transfer(standard_1d)
        assert report["tie_measure"] == 0
        assert report["envelope_equality"]
        assert report["J_gap"] <= 1e-12 * max(1, abs(report["J"]))
        assert report["transfer_holds"]

    def test_tie_plateau(self):
        spec, u, phi = instances.tie_plateau_instance()
        report = solver.solve_transfer(spec, u0=u)
        assert report["tie_measure"] > 0
        assert not report["transfer_holds"]

    def test_needs_kink_regime(self):
        with pytest.raises(ValueError):
            solver.solve_transfer(instances.standard_problem(1, nodes=17, beta=1.0))


class TestSweep:
    def test_rows(self):
        spec = instances.standard_problem(1, nodes=65)
        rows = solver.sweep_beta(spec, [0.01, 0.2, 1.0, 3.0])
        assert [r["beta"] for r in rows] == [0.01, 0.2, 1.0, 3.0]
        assert rows[-1]["above_beta_star"]
        # beta = 1 lies in the l1 regime, where the sparse iteration cycles
        assert "l0_error" in rows[2] and "pc_support" in rows[2]
        supports = [r["l0_support"] for r in rows if "l0_support" in r]
        assert supports == sorted(supports, reverse=True)
        assert rows[-1]["pc_support"] == 0

    @pytest.mark.parametrize("betas", [[], [0.2, 0.1], [0.1, 0.1]])
    def test_bad_grid(self, betas):
        with pytest.raises(ValueError):
            solver.sweep_beta(instances.standard_problem(1, nodes=17), betas)


def test_newton_failure_propagates():
    spec = instances.standard_problem(1, nodes=17)
    settings = SolverSettings(newton=pde.NewtonSettings(max_iter=1))
    with pytest.raises(pde.NonConvergence):
        solver.solve_pc(spec, np.full(15, 10.0), settings)
