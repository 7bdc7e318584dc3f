"""Command line interface: simulate, fit, bench, select-eta, verify.

Exit codes: 0 success, 1 usage error, 2 input validation error,
3 solver did not converge, 4 benchmark failure rate over threshold.
"""

from __future__ import annotations

import json
import sys
from dataclasses import fields, replace
from pathlib import Path

import click
import numpy as np

from . import algorithms as alg
from . import bench as bn
from . import regularizers as rg
from . import simulate as sim
from . import verify as vf
from .exceptions import ConvergenceError, DomainError, ProblemFormatError, SolverError
from .problem import load_problem, save_problem

# usage errors exit with 1 rather than click's default 2, which we reserve
# for input validation failures
click.UsageError.exit_code = 1

EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_CONVERGENCE = 3
EXIT_BENCH = 4

BENCH_FAILURE_THRESHOLD = 0.2


def _load_json_arg(value: str) -> dict:
    """Accept either a path to a JSON file or an inline JSON string."""
    path = Path(value)
    try:
        if path.is_file():
            with open(path) as fh:
                return json.load(fh)
        return json.loads(value)
    except json.JSONDecodeError as exc:
        raise ProblemFormatError(f"could not parse JSON {value!r}: {exc}") from exc


def _solver_config(payload: dict) -> alg.SolverConfig:
    known = {f.name for f in fields(alg.SolverConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ProblemFormatError(f"unknown solver config keys: {sorted(unknown)}")
    return alg.SolverConfig(**payload)


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
def main():
    """Sparse feature selection for linear mixed effect models."""


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--seeds", "n_seeds", type=int, default=1, show_default=True,
              help="Number of consecutive seeds starting at --seed.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file with simulation settings.")
@click.option("--out", "out_dir", type=click.Path(), default=".", show_default=True)
def simulate(seed, n_seeds, config_path, out_dir):
    """Generate synthetic problems and their ground truth masks."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        for s in range(seed, seed + n_seeds):
            if config_path:
                with open(config_path) as fh:
                    payload = json.load(fh)
                payload["seed"] = s
                config = sim.SimConfig(
                    p=int(payload["p"]),
                    q=int(payload["q"]),
                    beta_true=np.asarray(payload["beta_true"], dtype=float),
                    gamma_true=np.asarray(payload["gamma_true"], dtype=float),
                    group_sizes=tuple(payload["group_sizes"]),
                    noise_std=float(payload.get("noise_std", sim.DEFAULT_NOISE_STD)),
                    z_equals_x=bool(payload.get("z_equals_x", True)),
                    seed=s,
                )
            else:
                config = sim.default_config(s)
            problem, truth = sim.generate(config)
            save_problem(problem, out / f"problem_seed{s}.json")
            sim.save_truth(truth, out / f"truth_seed{s}.json")
            click.echo(f"wrote problem_seed{s}.json and truth_seed{s}.json to {out}")
    except (ProblemFormatError, DomainError, KeyError, ValueError, OSError) as exc:
        _fail(EXIT_VALIDATION, str(exc))


@main.command()
@click.argument("problem_path", type=click.Path(exists=True))
@click.option("--reg", "reg_json", required=True,
              help='Regularizer as JSON, e.g. \'{"kind": "l1", "lambda": 0.5}\'.')
@click.option("--algo", type=click.Choice(sorted(bn.ALGORITHMS)), default="msr3_fast",
              show_default=True)
@click.option("--config", "config_json", default=None,
              help="Solver settings as JSON (inline or a file path).")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write the full fit report as JSON.")
def fit(problem_path, reg_json, algo, config_json, out_path):
    """Fit one problem with one regularizer and print the selection."""
    try:
        problem = load_problem(problem_path)
        reg = rg.Regularizer.from_dict(_load_json_arg(reg_json))
        cfg = _solver_config(_load_json_arg(config_json) if config_json else {})
    except (ProblemFormatError, DomainError, TypeError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    try:
        report = bn.ALGORITHMS[algo](problem, reg, cfg)
    except (ConvergenceError, SolverError) as exc:
        _fail(EXIT_CONVERGENCE, str(exc))
    payload = report.to_dict()
    if out_path:
        with open(out_path, "w") as fh:
            json.dump(payload, fh, indent=2)
    click.echo(json.dumps(
        {
            "algorithm": report.algorithm,
            "termination": report.termination,
            "beta_mask": payload["beta_mask"],
            "gamma_mask": payload["gamma_mask"],
            "bic": alg.bic(problem, report.beta_tilde, report.gamma_tilde),
            "seconds": report.total_seconds,
        },
        indent=2,
    ))
    if not report.converged:
        sys.exit(EXIT_CONVERGENCE)


@main.command()
@click.option("--seeds", type=int, default=20, show_default=True)
@click.option("--full", is_flag=True, help="Run the long benchmark (100 seeds).")
@click.option("--workers", type=int, default=None,
              help=f"Worker processes (also via {bn.WORKERS_ENV}).")
@click.option("--out", "out_dir", type=click.Path(), default="bench_out", show_default=True)
@click.option("--algos", default=None, help="Comma separated algorithm subset.")
@click.option("--regs", default=None, help="Comma separated regularizer subset.")
@click.option("--eta", default="3.0", show_default=True,
              help='Coupling weight, a number or "auto".')
@click.option("--config", "config_json", default=None,
              help="Solver settings as JSON (inline or a file path).")
def bench(seeds, full, workers, out_dir, algos, regs, eta, config_json):
    """Run the synthetic selection benchmark and write the summary table."""
    try:
        eta_val = "auto" if eta == "auto" else float(eta)
        spec = bn.BenchSpec(
            algorithms=tuple(algos.split(",")) if algos else ("pgd", "msr3", "msr3_fast"),
            regularizers=tuple(regs.split(",")) if regs else bn.ALL_REGULARIZERS,
            seeds=100 if full else seeds,
            eta=eta_val,
            output_dir=out_dir,
        )
        cfg = _solver_config(_load_json_arg(config_json) if config_json else {})
    except (ProblemFormatError, DomainError, ValueError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    result = bn.run_bench(spec, base_cfg=cfg, workers=bn.resolve_workers(workers))
    for cell in result["aggregate"]:
        click.echo(
            f"{cell['regularizer']:>7s} {cell['algorithm']:>9s}  "
            f"accuracy {cell['mean_accuracy']:.3f} +/- {cell['std_accuracy']:.3f}  "
            f"mean fit {cell['mean_fit_seconds']:.3f}s  ({cell['trials']} trials)"
        )
    click.echo(f"failure rate {result['failure_rate']:.1%} over {result['n_tasks']} trials")
    if result["failure_rate"] > BENCH_FAILURE_THRESHOLD:
        _fail(EXIT_BENCH, f"failure rate {result['failure_rate']:.1%} exceeds "
                          f"{BENCH_FAILURE_THRESHOLD:.0%}")


@main.command("select-eta")
@click.argument("problem_path", type=click.Path(exists=True))
@click.option("--reg", "reg_json", required=True,
              help="Regularizer as JSON (inline or a file path).")
@click.option("--grid", default="0.1,1,3,10,40", show_default=True,
              help="Comma separated eta grid.")
@click.option("--config", "config_json", default=None,
              help="Solver settings as JSON (inline or a file path).")
def select_eta(problem_path, reg_json, grid, config_json):
    """Choose the coupling weight by information criterion over a grid."""
    try:
        problem = load_problem(problem_path)
        reg = rg.Regularizer.from_dict(_load_json_arg(reg_json))
        cfg = _solver_config(_load_json_arg(config_json) if config_json else {})
        eta_grid = [float(x) for x in grid.split(",")]
    except (ProblemFormatError, DomainError, ValueError, TypeError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    try:
        best, scores = alg.select_eta(problem, reg, eta_grid, cfg)
    except SolverError as exc:
        _fail(EXIT_CONVERGENCE, str(exc))
    click.echo(json.dumps({"eta": best, "scores": scores}, indent=2, default=float))


@main.command()
@click.option("--full", is_flag=True, help="Also run the slow boundary and consistency checks.")
def verify(full):
    """Run the internal cross-check suite and report pass/fail per check."""
    result = vf.run_suite(full=full)
    for check in result["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        detail = {k: v for k, v in check.items() if k not in ("name", "passed")}
        click.echo(f"[{status}] {check['name']}  {json.dumps(detail, default=float)}")
    if not result["passed"]:
        _fail(EXIT_VALIDATION, "verification suite failed")
    click.echo("all checks passed")


if __name__ == "__main__":
    main()
