"""Benchmark harness: simulate, sweep the penalty grid, score selection.

Each trial generates one synthetic problem, fits it for every penalty
strength on a log grid, keeps the BIC-best fit, and scores its selected
coordinates against the ground truth.  Trials are independent and may run
in parallel worker processes; aggregation is a single-threaded reduction.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import algorithms as alg
from . import regularizers as rg
from . import simulate as sim
from .exceptions import LmeSelectError
from .problem import LMEProblem

ALGORITHMS = {
    "pgd": alg.pgd_naive,
    "msr3": alg.msr3,
    "msr3_fast": alg.msr3_fast,
}

ALL_REGULARIZERS = ("l0", "l1", "alasso", "scad")

WORKERS_ENV = "LME_SELECT_WORKERS"


def default_lambda_grid(n_points: int = 20) -> np.ndarray:
    return np.logspace(-2, 2, n_points)


@dataclass(frozen=True)
class BenchSpec:
    algorithms: tuple = ("pgd", "msr3", "msr3_fast")
    regularizers: tuple = ALL_REGULARIZERS
    seeds: int = 20
    lambda_grid: tuple = tuple(default_lambda_grid())
    eta: object = 3.0  # float or "auto"
    output_dir: Optional[str] = None
    eta_grid: tuple = (0.1, 1.0, 3.0, 10.0, 40.0)

    def __post_init__(self):
        if not self.algorithms or not self.regularizers:
            raise LmeSelectError("algorithm and regularizer sets must be nonempty")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise LmeSelectError(f"unknown algorithms: {sorted(unknown)}")
        unknown = set(self.regularizers) - set(ALL_REGULARIZERS)
        if unknown:
            raise LmeSelectError(f"unknown regularizers: {sorted(unknown)}")
        if self.seeds < 1:
            raise LmeSelectError("seeds must be >= 1")


def resolve_workers(cli_value: Optional[int] = None) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    if cli_value:
        return max(1, cli_value)
    return min(4, os.cpu_count() or 1)


def make_regularizer(
    kind: str, lam: float, problem: LMEProblem, w_ref: Optional[np.ndarray] = None
) -> rg.Regularizer:
    """Instantiate a regularizer over the stacked (beta, gamma) coordinates;
    the adaptive lasso derives its weights from an unpenalized reference fit."""
    if kind == "alasso":
        if w_ref is None:
            raise LmeSelectError("the adaptive lasso needs a reference fit")
        return rg.Regularizer(
            kind=kind, lam=lam, alasso_weights=rg.alasso_weights_from_reference(w_ref)
        )
    return rg.Regularizer(kind=kind, lam=lam)


def unpenalized_reference(problem: LMEProblem, cfg: alg.SolverConfig) -> np.ndarray:
    """Unpenalized fit used for adaptive lasso weights."""
    report = alg.msr3_fast(problem, rg.Regularizer(kind="l1", lam=0.0), cfg)
    return np.concatenate([report.beta_hat, report.gamma_hat])


def solver_config_for(algo: str, base: alg.SolverConfig) -> alg.SolverConfig:
    return base


def run_trial(
    seed: int,
    algo: str,
    reg_kind: str,
    lambda_grid: Sequence[float],
    eta,
    base_cfg: alg.SolverConfig = None,
    sim_config: sim.SimConfig = None,
    eta_grid: Sequence[float] = (0.1, 1.0, 3.0, 10.0, 40.0),
) -> dict:
    """One benchmark cell: generate, sweep lambda, pick by BIC, score."""
    base_cfg = base_cfg or alg.SolverConfig()
    config = sim_config or sim.default_config(seed)
    if sim_config is not None and sim_config.seed != seed:
        config = replace(sim_config, seed=seed)
    problem, truth = sim.generate(config)
    solve = ALGORITHMS[algo]

    if eta == "auto":
        ref = unpenalized_reference(problem, replace(base_cfg, eta=base_cfg.eta))
        reg_mid = make_regularizer(
            reg_kind, float(np.median(lambda_grid)), problem, w_ref=ref
        )
        eta_val, _ = alg.select_eta(problem, reg_mid, eta_grid, base_cfg)
    else:
        eta_val = float(eta)
    cfg = replace(base_cfg, eta=eta_val)

    w_ref = unpenalized_reference(problem, cfg) if reg_kind == "alasso" else None

    best = None
    fit_times = []
    errors = []
    prev = None
    # sweep descending so each fit warm-starts from the sparser one before it
    for lam in sorted(lambda_grid, reverse=True):
        reg = make_regularizer(reg_kind, float(lam), problem, w_ref=w_ref)
        t0 = time.perf_counter()
        try:
            report = solve(problem, reg, cfg, warm=prev)
        except LmeSelectError as exc:
            errors.append({"lambda": float(lam), "error": str(exc)})
            prev = None
            continue
        prev = report
        elapsed = time.perf_counter() - t0
        fit_times.append(elapsed)
        score = alg.bic(problem, report.beta_tilde, report.gamma_tilde)
        if best is None or score < best["bic"]:
            best = {
                "lambda": float(lam),
                "bic": float(score),
                "report": report,
                "seconds": elapsed,
            }
    if best is None:
        raise LmeSelectError(
            f"trial seed={seed} {algo}/{reg_kind}: every lambda failed: {errors[:3]}"
        )
    report = best["report"]
    acc = sim.accuracy(report.beta_mask, report.gamma_mask, truth)
    return {
        "seed": seed,
        "algorithm": algo,
        "regularizer": reg_kind,
        "eta": eta_val,
        "best_lambda": best["lambda"],
        "bic": best["bic"],
        "accuracy": acc,
        "accuracy_beta": float(
            np.mean(np.asarray(report.beta_mask) == truth.beta_mask)
        ),
        "accuracy_gamma": float(
            np.mean(np.asarray(report.gamma_mask) == truth.gamma_mask)
        ),
        "f1_beta": sim.f1_score(report.beta_mask, truth.beta_mask),
        "f1_gamma": sim.f1_score(report.gamma_mask, truth.gamma_mask),
        "mean_fit_seconds": float(np.mean(fit_times)),
        "total_seconds": float(np.sum(fit_times)),
        "termination": report.termination,
        "lambda_errors": errors,
    }


def _trial_worker(args):
    try:
        return run_trial(**args), None
    except Exception as exc:  # survive individual trial failures
        return None, {
            "seed": args["seed"],
            "algorithm": args["algo"],
            "regularizer": args["reg_kind"],
            "error": str(exc),
        }


def aggregate(rows: Sequence[dict]) -> list:
    """Per (algorithm, regularizer) means and spreads."""
    cells = {}
    for row in rows:
        cells.setdefault((row["algorithm"], row["regularizer"]), []).append(row)
    out = []
    for (algo, reg_kind), cell_rows in sorted(cells.items()):
        accs = np.array([r["accuracy"] for r in cell_rows])
        times = np.array([r["mean_fit_seconds"] for r in cell_rows])
        out.append(
            {
                "algorithm": algo,
                "regularizer": reg_kind,
                "trials": len(cell_rows),
                "mean_accuracy": float(np.mean(accs)),
                "std_accuracy": float(np.std(accs)),
                "mean_fit_seconds": float(np.mean(times)),
            }
        )
    return out


def run_bench(
    spec: BenchSpec,
    base_cfg: alg.SolverConfig = None,
    workers: int = 1,
    sim_config: sim.SimConfig = None,
) -> dict:
    """Run the full grid of trials; returns rows, aggregates, and failures."""
    base_cfg = base_cfg or alg.SolverConfig()
    tasks = [
        {
            "seed": seed,
            "algo": algo,
            "reg_kind": reg_kind,
            "lambda_grid": tuple(spec.lambda_grid),
            "eta": spec.eta,
            "base_cfg": base_cfg,
            "sim_config": sim_config,
            "eta_grid": tuple(spec.eta_grid),
        }
        for seed in range(spec.seeds)
        for reg_kind in spec.regularizers
        for algo in spec.algorithms
    ]
    rows, failures = [], []
    if workers <= 1:
        results = map(_trial_worker, tasks)
        for row, failure in results:
            (rows if row is not None else failures).append(row or failure)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_trial_worker, t) for t in tasks]
            for fut in as_completed(futures):
                row, failure = fut.result()
                (rows if row is not None else failures).append(row or failure)
    rows.sort(key=lambda r: (r["algorithm"], r["regularizer"], r["seed"]))
    result = {
        "rows": rows,
        "aggregate": aggregate(rows),
        "failures": failures,
        "n_tasks": len(tasks),
        "failure_rate": len(failures) / len(tasks) if tasks else 0.0,
    }
    if spec.output_dir:
        write_outputs(result, spec.output_dir)
    return result


def write_outputs(result: dict, output_dir) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench_result.json", "w") as fh:
        json.dump(result, fh, indent=2, default=_json_default)
    with open(out / "bench_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["regularizer", "algorithm", "mean_accuracy", "std_accuracy", "mean_fit_seconds", "trials"]
        )
        for cell in result["aggregate"]:
            writer.writerow(
                [
                    cell["regularizer"],
                    cell["algorithm"],
                    f"{cell['mean_accuracy']:.4f}",
                    f"{cell['std_accuracy']:.4f}",
                    f"{cell['mean_fit_seconds']:.6f}",
                    cell["trials"],
                ]
            )
    with open(out / "bench_trials.csv", "w", newline="") as fh:
        fields = [
            "seed", "algorithm", "regularizer", "eta", "best_lambda",
            "bic", "accuracy", "mean_fit_seconds", "total_seconds", "termination",
        ]
        writer = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(result["rows"])


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, alg.SolveReport):
        return obj.to_dict()
    raise TypeError(f"not JSON serializable: {type(obj)}")
