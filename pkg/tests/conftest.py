import numpy as np
import pytest

from l0control import functionals, instances, solver

# acceptance results collected by test_acceptance.py, printed at the end
ACCEPTANCE = {}


def record_acceptance(number, title, passed, detail=""):
    ACCEPTANCE[number] = (title, passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        line = f"AC{number:<2} {'PASS' if passed else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def standard_1d():
    return instances.standard_problem(1)


@pytest.fixture(scope="session")
def standard_2d():
    return instances.standard_problem(2)


@pytest.fixture(scope="session")
def l0_solution_1d(standard_1d):
    u, trace = solver.solve_l0(standard_1d)
    return u, trace, functionals.evaluate(standard_1d, u)


@pytest.fixture(scope="session")
def pc_solution_1d(standard_1d):
    u, trace = solver.solve_pc(standard_1d)
    return u, trace, functionals.evaluate(standard_1d, u)


def small_spec(interior=15, family="cubic", alpha=0.01, beta=0.02, gamma=10.0, target="3*exp(-20*(x-0.5)**2)", **extra):
    config = {
        "dim": 1,
        "nodes": interior + 2,
        "nonlinearity": family,
        "c0": 1.0,
        "c3": 1.0 if family == "cubic" else 0.0,
        "target": target,
        "alpha": alpha,
        "beta": beta,
        "gamma": gamma,
    }
    config.update(extra)
    from l0control.problem import build_problem

    return build_problem(config)
