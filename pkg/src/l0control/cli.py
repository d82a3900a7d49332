"""Command-line front end: ``solve``, ``verify``, ``sweep`` and ``oracle``.

Problem files use ``key = value`` lines with ``#`` comments.  Problem keys:

    dim, nodes, extent, kappa, lambda_a, nonlinearity, c0, c3, target,
    alpha, beta, gamma

(see :data:`l0control.problem.CONFIG_KEYS`).  The same file may carry run
keys, which command-line flags override:

    solver     l0 | pc (default l0)
    seed       integer seed of the single random generator (default 0)
    tol        solver and residual tolerance (default 1e-8)
    max_iter   solver iteration cap (default 2000)
    trials     samples for the growth and bilinear-form probes (default 1000)
    probe_trials  random restarts of the isolated-stationarity probe (default 3)
    tau        comma-separated tau values for the sufficient check
    betas      comma-separated, increasing beta grid for ``sweep``
    solution   field CSV with the control to verify
    oracle_scale  fraction of the full draw counts used by ``oracle`` (default 1)

Exit codes: 0 success, 1 a check or solver failed, 2 configuration error.
"""

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import functionals, instances, optimality, oracles, pde, pointwise, soc, solver
from .problem import ConfigError, build_problem, l0_norm, load_config, read_field_csv, write_field_csv
from .reports import write_report, write_table

RUN_KEYS = {
    "solver": "l0 | pc",
    "seed": "integer seed",
    "tol": "solver and residual tolerance",
    "max_iter": "solver iteration cap",
    "trials": "growth and bilinear-form samples",
    "probe_trials": "restarts of the isolated-stationarity probe",
    "tau": "comma-separated tau values",
    "betas": "comma-separated beta grid",
    "solution": "field CSV of the control to verify",
    "oracle_scale": "fraction of the oracle draw counts",
}

DEFAULT_TAU_FRACTIONS = (1e-3, 1e-2, 1e-1)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    command: str
    config_path: str = None
    out: str = "."
    seed: int = 0
    solver: str = "l0"
    tol: float = 1e-8
    max_iter: int = 2000
    trials: int = 1000
    probe_trials: int = 3
    taus: tuple = None
    betas: tuple = None
    solution: str = None

    def settings(self):
        return solver.SolverSettings(max_iter=self.max_iter, tol=self.tol)


def parse_list(text, name):
    """Comma-separated floats; an empty string gives an empty tuple."""
    if text is None:
        return None
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _int(value, name):
    try:
        return int(str(value).strip())
    except ValueError:
        raise ConfigError(f"{name} must be an integer, got {value!r}") from None


def _positive_float(value, name):
    try:
        v = float(value)
    except ValueError:
        raise ConfigError(f"{name} must be a number, got {value!r}") from None
    if not v > 0:
        raise ConfigError(f"{name} must be positive")
    return v


def run_config(args, config):
    """Merge run keys from the problem file with command-line flags."""

    def pick(flag, key):
        value = getattr(args, flag, None)
        return value if value is not None else config.get(key)

    kind = pick("solver", "solver") or "l0"
    if kind not in ("l0", "pc"):
        raise ConfigError(f"solver must be 'l0' or 'pc', got {kind!r}")
    seed = pick("seed", "seed")
    rc = RunConfig(
        command=args.command,
        config_path=getattr(args, "config", None),
        out=args.out,
        seed=0 if seed is None else _int(seed, "seed"),
        solver=kind,
        tol=_positive_float(config.get("tol", 1e-8), "tol"),
        max_iter=_int(config.get("max_iter", 2000), "max_iter"),
        trials=_int(config.get("trials", 1000), "trials"),
        probe_trials=_int(config.get("probe_trials", 3), "probe_trials"),
        taus=parse_list(pick("tau", "tau"), "tau"),
        betas=parse_list(pick("beta", "betas"), "beta"),
        solution=pick("solution", "solution"),
    )
    if rc.max_iter < 1 or rc.trials < 1 or rc.probe_trials < 0:
        raise ConfigError("max_iter and trials must be >= 1, probe_trials >= 0")
    return rc


def _load_problem(args, required=True):
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        return {}, None
    path = Path(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = load_config(path)
    spec = build_problem(config)
    return config, spec


def _out_dir(rc):
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solution_summary(spec, cache):
    return {
        "J": cache.J,
        "J_pc": cache.J_pc,
        "F": cache.F,
        "support_measure": l0_norm(spec.grid, cache.u, spec.zero_tol),
        "max_abs_control": float(np.max(np.abs(cache.u))),
        "newton_iterations": cache.newton_iterations,
    }


def _first_order(spec, cache, kind, tol):
    """First-order certificates; returns ``(section, hard_failures)``."""
    pmp = optimality.pmp_residual(spec, cache)
    sparsity = optimality.check_sparsity_structure(spec, cache)
    pc = optimality.pc_stationarity_residual(spec, cache)
    section = {
        "pmp": pmp.summary(),
        "sparsity_structure": sparsity,
        "pc_stationarity": {"max_residual": pc["max_residual"]},
    }
    interior = spec.cost.regime == pointwise.INTERIOR_KINK
    if interior:
        # a Hamiltonian gap r allows alpha |u - u*| up to sqrt(2 alpha r)
        pc_tol = tol if kind == "pc" else max(tol, float(np.sqrt(2 * spec.alpha * tol)))
        structure = optimality.check_pc_sparsity_structure(spec, cache, tol=pc_tol)
        section["pc_sparsity_structure"] = dict(structure, tolerance=pc_tol)
    failures = []
    if kind == "l0":
        if pmp.max_residual > tol:
            failures.append(f"pmp residual {pmp.max_residual!r} > {tol!r}")
        if sparsity["violations"]:
            failures.append(f"{sparsity['violations']} sparsity-structure violations")
    else:
        if pc["max_residual"] > tol:
            failures.append(f"pc stationarity residual {pc['max_residual']!r} > {tol!r}")
        if interior and section["pc_sparsity_structure"]["violations"]:
            failures.append(
                f"{section['pc_sparsity_structure']['violations']} convexified support-structure violations"
            )
    return section, failures


def _transfer_section(spec, cache):
    p = spec.cost
    defect = solver.envelope_defect(spec, cache.u)
    ties = np.abs(np.abs(cache.phi) - p.phi_threshold) <= optimality.TIE_TOL
    return {
        "tie_nodes": int(np.count_nonzero(ties)),
        "tie_measure": float(np.count_nonzero(ties)) * spec.grid.cell_volume,
        "envelope_max_defect": float(defect.max()),
        "J_gap": abs(cache.J - cache.J_pc),
    }


def _witness_file(out, name, spec, v):
    path = out / name
    write_field_csv(path, spec.grid, v, "direction")
    return path.name


def _soc_section(spec, cache, rc, rng, out):
    """Second-order checks; never produces hard failures."""
    p = spec.cost
    if p.regime != pointwise.INTERIOR_KINK:
        return {"verdict": soc.DELEGATED, "notes": ["l1 regime: second-order theory delegated"]}
    section = {}
    try:
        nec = soc.check_necessary_soc(spec, cache, rng)
    except ValueError as exc:
        return {"skipped": str(exc)}
    section["necessary"] = nec.to_dict()
    if nec.witness is not None:
        section["necessary"]["witness_file"] = _witness_file(out, "witness_necessary.csv", spec, nec.witness)
    taus = rc.taus
    if taus is None:
        taus = tuple(f * p.phi_threshold for f in DEFAULT_TAU_FRACTIONS)
    for tau in taus:
        if not 0 < tau < p.phi_threshold:
            raise ConfigError(f"tau must lie in (0, {p.phi_threshold!r}), got {tau!r}")
    sufficient, holding = [], None
    for k, tau in enumerate(taus):
        rep = soc.check_sufficient_soc(spec, cache, tau, rng)
        row = rep.to_dict()
        if rep.witness is not None:
            row["witness_file"] = _witness_file(out, f"witness_sufficient_{k}.csv", spec, rep.witness)
        sufficient.append(row)
        # the largest radius gives the most informative growth and probe runs
        if rep.verdict == soc.SUFFICIENT_HOLDS and rep.rho and (holding is None or rep.rho > holding.rho):
            holding = rep
    section["sufficient"] = sufficient
    if holding is not None:
        growth = soc.measure_quadratic_growth(spec, cache, holding.rho, rc.trials, rng)
        growth["has_witness"] = growth.pop("witness") is not None
        section["growth"] = dict(growth, tau=holding.tau)
        if rc.probe_trials:
            probe = soc.isolated_stationarity_probe(spec, cache, holding.rho, rc.probe_trials, rng)
            probe["distinct_limits"] = len(probe["distinct_limits"])
            section["isolated_stationarity"] = probe
    section["bilinear_forms"] = soc.compare_bilinear_forms(spec, cache, rc.trials, rng)
    if np.isfinite(p.gamma):
        section["structural_assumption"] = soc.structural_assumption_estimate(spec, cache, trials=rc.trials, rng=rng)
    return section


def _solve_or_fail(spec, rc):
    """Run the configured solver; returns ``(u, trace, error message or None)``."""
    try:
        u, trace = solver.solve(spec, rc.solver, None, rc.settings())
        return u, trace, None
    except solver.SolverError as exc:
        return exc.u, exc.trace, f"{type(exc).__name__}: {exc}"


def cmd_solve(args):
    config, spec = _load_problem(args)
    rc = run_config(args, config)
    out = _out_dir(rc)
    u, trace, error = _solve_or_fail(spec, rc)
    write_field_csv(out / "solution.csv", spec.grid, u, "u")
    if trace is not None:
        trace.to_csv(out / "trace.csv")
    cache = functionals.evaluate(spec, u)
    first, failures = _first_order(spec, cache, rc.solver, rc.tol)
    body = {
        "solver": rc.solver,
        "status": "PMP-stationary" if rc.solver == "l0" and not error else ("stationary" if not error else "failed"),
        "error": error,
        "trace": trace.summary() if trace is not None else None,
        "solution": _solution_summary(spec, cache),
        "first_order": first,
    }
    if error:
        failures.append(error)
    body["failures"] = failures
    write_report(out / "report.json", "solve", spec, body, rc.seed)
    _say(f"solve ({rc.solver}): {'ok' if not failures else 'FAILED'}; report in {out / 'report.json'}")
    for f in failures:
        _say(f"  {f}")
    return 1 if failures else 0


def cmd_verify(args):
    config, spec = _load_problem(args)
    rc = run_config(args, config)
    out = _out_dir(rc)
    rng = np.random.default_rng(rc.seed)
    body = {"solver": rc.solver}
    failures = []
    if rc.solution is not None:
        path = Path(rc.solution)
        if not path.is_file():
            raise ConfigError(f"solution file not found: {path}")
        try:
            u = read_field_csv(path, spec.grid)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        body["solution_source"] = path.name
    else:
        u, trace, error = _solve_or_fail(spec, rc)
        body["solution_source"] = "solved"
        body["trace"] = trace.summary() if trace is not None else None
        if error:
            failures.append(error)
            body["error"] = error
        write_field_csv(out / "solution.csv", spec.grid, u, "u")
    if np.any(np.abs(u) > spec.gamma * (1 + 1e-12)):
        failures.append("control violates the box constraint")
    cache = functionals.evaluate(spec, u)
    body["solution"] = _solution_summary(spec, cache)
    first, hard = _first_order(spec, cache, rc.solver, rc.tol)
    failures += hard
    body["first_order"] = first
    zero_cache = functionals.evaluate(spec, np.zeros(spec.grid.size))
    body["beta_star"] = optimality.beta_star(spec, zero_cache)
    if spec.cost.regime == pointwise.INTERIOR_KINK:
        body["transfer"] = _transfer_section(spec, cache)
    body["second_order"] = _soc_section(spec, cache, rc, rng, out)
    body["failures"] = failures
    write_report(out / "report.json", "verify", spec, body, rc.seed)
    nec = body["second_order"].get("necessary", {}).get("verdict", body["second_order"].get("verdict"))
    suff = [s["verdict"] for s in body["second_order"].get("sufficient", [])]
    _say(f"verify: first-order {'ok' if not failures else 'FAILED'}; necessary: {nec}; sufficient: {suff}")
    for f in failures:
        _say(f"  {f}")
    return 1 if failures else 0


def cmd_sweep(args):
    config, spec = _load_problem(args)
    rc = run_config(args, config)
    if not rc.betas:
        raise ConfigError("beta grid is empty; pass --beta or a 'betas' key")
    if any(b <= 0 for b in rc.betas):
        raise ConfigError("beta values must be positive")
    if any(b2 <= b1 for b1, b2 in zip(rc.betas, rc.betas[1:])):
        raise ConfigError("beta grid must be strictly increasing")
    out = _out_dir(rc)
    rows = solver.sweep_beta(spec, rc.betas, rc.settings())
    columns = ["beta", "beta_star", "above_beta_star"]
    for kind in ("l0", "pc"):
        columns += [f"{kind}_support", f"{kind}_J", f"{kind}_J_pc", f"{kind}_iterations", f"{kind}_error"]
    columns.append("transfer_holds")
    write_table(out / "sweep.csv", rows, columns)
    ok = sum(1 for r in rows for k in ("l0", "pc") if f"{k}_error" not in r)
    write_report(out / "report.json", "sweep", spec, {"rows": rows, "successful_solves": ok}, rc.seed)
    _say(f"sweep: {len(rows)} beta values, {ok} successful solves; table in {out / 'sweep.csv'}")
    return 0 if ok else 1


def cmd_oracle(args):
    config, spec = _load_problem(args, required=False)
    rc = run_config(args, config)
    rng = np.random.default_rng(rc.seed)
    scale = _positive_float(config.get("oracle_scale", 1.0), "oracle_scale")
    if spec is None:
        spec = instances.standard_problem(1)
    rows = oracles.run_all(rng, spec, scale)
    width = max(len(r["oracle"]) for r in rows)
    _say(f"{'oracle':<{width}}  {'delta':>12}  {'tolerance':>10}  ok")
    for r in rows:
        _say(f"{r['oracle']:<{width}}  {r['delta']:12.3e}  {r['tolerance']:10.1e}  {'yes' if r['ok'] else 'NO'}")
    _say(f"remainder coefficient -(sqrt(2)-1)^2/2 = {oracles.REMAINDER_COEFFICIENT!r}")
    if args.out is not None:
        out = _out_dir(rc)
        write_table(out / "oracle.csv", rows, ["oracle", "delta", "tolerance", "ok"])
        write_report(out / "report.json", "oracle", spec, {"rows": rows, "remainder_coefficient": oracles.REMAINDER_COEFFICIENT}, rc.seed)
    return 0 if all(r["ok"] for r in rows) else 1


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "sweep": cmd_sweep, "oracle": cmd_oracle}


def _say(text):
    print(text, flush=True)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="l0control",
        description="Sparse L0 optimal control of semilinear elliptic equations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the original or the convexified problem"),
        ("verify", "check optimality conditions at a solution"),
        ("sweep", "solve along a grid of beta values"),
        ("oracle", "compare implementations against brute-force oracles"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="problem file with key = value lines")
        p.add_argument("--out", default=None if name == "oracle" else ".", help="output directory")
        p.add_argument("--seed", type=int, help="seed of the random generator")
        if name in ("solve", "verify", "sweep"):
            p.add_argument("--solver", choices=("l0", "pc"), help="which problem to solve")
        if name == "verify":
            p.add_argument("--tau", help="comma-separated tau values for the sufficient check")
            p.add_argument("--solution", help="field CSV with the control to verify")
        if name == "sweep":
            p.add_argument("--beta", help="comma-separated increasing beta values")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except pde.NonConvergence as exc:
        print(f"state equation did not converge: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
