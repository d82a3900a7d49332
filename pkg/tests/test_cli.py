import csv
import json

import numpy as np
import pytest

from l0control import cli
from l0control.problem import Grid, write_field_csv

SMALL = """\
# cubic problem with a bump target
dim = 1
nodes = 65
nonlinearity = cubic
c0 = 1
c3 = 1
target = 3*exp(-20*(x-0.5)**2)
alpha = 0.01
beta = 0.02
gamma = 10
trials = 50
probe_trials = 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "problem.txt"
    path.write_text(SMALL)
    return path


def run(*argv):
    return cli.main([str(a) for a in argv])


def load(path):
    return json.loads(path.read_text())


class TestSolve:
    @pytest.mark.parametrize("kind", ["l0", "pc"])
    def test_writes_outputs(self, config, tmp_path, kind):
        out = tmp_path / kind
        assert run("solve", "--config", config, "--out", out, "--solver", kind) == 0
        report = load(out / "report.json")
        assert report["command"] == "solve" and report["results"]["failures"] == []
        assert report["problem"]["interior_nodes"] == 63
        with open(out / "solution.csv") as fh:
            assert len(list(csv.reader(fh))) == 64
        assert (out / "trace.csv").exists()

    def test_iteration_cap_fails(self, config, tmp_path):
        config.write_text(SMALL + "max_iter = 1\n")
        assert run("solve", "--config", config, "--out", tmp_path / "o") == 1
        assert "MaxIterations" in load(tmp_path / "o" / "report.json")["results"]["error"]


class TestVerify:
    def test_solved_in_place(self, config, tmp_path):
        out = tmp_path / "v"
        assert run("verify", "--config", config, "--out", out) == 0
        results = load(out / "report.json")["results"]
        second = results["second_order"]
        assert second["necessary"]["verdict"] == "necessary-holds"
        assert any(s["verdict"] == "sufficient-holds" for s in second["sufficient"])
        assert second["growth"]["violations_J"] == 0
        assert results["transfer"]["tie_nodes"] == 0
        assert results["beta_star"] > 0

    def test_given_solution(self, config, tmp_path):
        run("solve", "--config", config, "--out", tmp_path / "s")
        out = tmp_path / "v"
        code = run("verify", "--config", config, "--out", out, "--solution", tmp_path / "s" / "solution.csv", "--tau", "0.001")
        assert code == 0
        results = load(out / "report.json")["results"]
        assert results["solution_source"] == "solution.csv"
        assert [s["tau"] for s in results["second_order"]["sufficient"]] == [0.001]

    def test_corrupted_solution_fails(self, config, tmp_path):
        grid = Grid.unit(1, 63)
        write_field_csv(tmp_path / "bad.csv", grid, np.full(63, 0.5))
        assert run("verify", "--config", config, "--out", tmp_path / "v", "--solution", tmp_path / "bad.csv") == 1
        assert load(tmp_path / "v" / "report.json")["results"]["failures"]

    def test_wrong_length_solution(self, config, tmp_path):
        write_field_csv(tmp_path / "short.csv", Grid.unit(1, 10), np.zeros(10))
        assert run("verify", "--config", config, "--out", tmp_path, "--solution", tmp_path / "short.csv") == 2

    def test_tau_out_of_range(self, config, tmp_path):
        assert run("verify", "--config", config, "--out", tmp_path, "--tau", "5") == 2

    def test_l1_regime_is_delegated(self, config, tmp_path):
        config.write_text(SMALL.replace("gamma = 10", "gamma = 1"))
        assert run("verify", "--config", config, "--out", tmp_path / "v", "--solver", "pc") == 0
        assert load(tmp_path / "v" / "report.json")["results"]["second_order"]["verdict"] == "delegated-regime"

    def test_deterministic(self, config, tmp_path):
        for name in ("a", "b"):
            assert run("verify", "--config", config, "--out", tmp_path / name, "--seed", 7) == 0
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


class TestSweep:
    def test_table(self, config, tmp_path):
        out = tmp_path / "s"
        assert run("sweep", "--config", config, "--out", out, "--beta", "0.01,0.2,3") == 0
        with open(out / "sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [float(r["beta"]) for r in rows] == [0.01, 0.2, 3.0]
        assert rows[-1]["above_beta_star"] == "true"
        assert load(out / "report.json")["results"]["successful_solves"] == 6

    @pytest.mark.parametrize("grid", ["", "0.2,0.1", "-1,2"])
    def test_bad_grid(self, config, tmp_path, grid):
        assert run("sweep", "--config", config, "--out", tmp_path, f"--beta={grid}") == 2

    def test_grid_from_file(self, config, tmp_path):
        config.write_text(SMALL + "betas = 0.01, 3\n")
        assert run("sweep", "--config", config, "--out", tmp_path / "s") in (0, 1)
        assert (tmp_path / "s" / "sweep.csv").exists()


class TestOracle:
    def test_quick_run(self, config, tmp_path, capsys):
        config.write_text(SMALL + "oracle_scale = 0.02\n")
        assert run("oracle", "--config", config, "--out", tmp_path / "o") == 0
        printed = capsys.readouterr().out
        assert "remainder coefficient" in printed and " no\n" not in printed
        with open(tmp_path / "o" / "oracle.csv") as fh:
            assert all(r["ok"] == "true" for r in csv.DictReader(fh))


class TestConfigErrors:
    def test_missing_config_flag(self, tmp_path):
        assert run("solve", "--out", tmp_path) == 2

    def test_missing_file(self, tmp_path):
        assert run("solve", "--config", tmp_path / "none.txt", "--out", tmp_path) == 2

    def test_alpha_zero_unbounded(self, config, tmp_path, capsys):
        config.write_text(SMALL.replace("alpha = 0.01", "alpha = 0").replace("gamma = 10", "gamma = inf"))
        assert run("solve", "--config", config, "--out", tmp_path) == 2
        assert "gamma" in capsys.readouterr().err

    def test_bad_run_key(self, config, tmp_path):
        config.write_text(SMALL + "solver = l2\n")
        assert run("solve", "--config", config, "--out", tmp_path) == 2

    def test_module_entry_point(self, config, tmp_path):
        import subprocess
        import sys

        done = subprocess.run(
            [sys.executable, "-m", "l0control", "solve", "--config", str(config), "--out", str(tmp_path / "m")],
            capture_output=True,
            text=True,
        )
        assert done.returncode == 0, done.stderr
        assert "solve (l0): ok" in done.stdout
