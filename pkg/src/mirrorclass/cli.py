"""Experiment harness: seeded replicate runs, CSV/JSON emission, k-sweeps with
rate-slope fits, bound reports, and deviation-tail measurements.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 failed
bound-vs-empirical check (with --check).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bounds as bnd
from .bounds import BoundReport
from .config import (
    ConfigError,
    ExperimentConfig,
    bound_inputs,
    build_geometry,
    build_loss,
    build_prior,
    build_schedule,
    geometry_constants,
    parse_config,
)
from .core import Instance
from .geometry import BLOCK_POWER, EUCLIDEAN, ProxSolverError
from .smd import run
from .synth import estimate_risk, make_task, sample_arrays

CSV_HEADER = [
    "k",
    "n",
    "geometry",
    "replicate",
    "seed",
    "empirical_excess",
    "std_error",
    "bound_eq2",
    "bound_rate",
    "audit_min_residual",
]

SEED_STRIDE = 10007
_MC_SEED_OFFSET = 999983


def replicate_seed(base_seed: int, replicate: int) -> int:
    return base_seed + replicate * SEED_STRIDE


def _instance_stream(task, n: int, seed: int):
    X, y = sample_arrays(task, n, seed)
    for i in range(n):
        yield Instance(X[i], int(y[i]) + 1)


def closed_form_rate(cfg: ExperimentConfig, schedule, U: float, G: float) -> float:
    """The printed constant-step excess-risk rate for the configuration."""
    if cfg.n == 0:
        return float("inf")
    inp = bound_inputs(cfg)
    if cfg.scale_mode != "none":
        return bnd.rate_weighted(inp, build_prior(cfg))
    if cfg.geometry_kind == EUCLIDEAN:
        return bnd.rate_euclid(inp)
    if cfg.geometry_kind == BLOCK_POWER:
        return bnd.rate_l1l2(inp)
    return bnd.oracle_bound(U, G, schedule)


def _replicate_job(payload: tuple[ExperimentConfig, int]) -> dict:
    cfg, replicate = payload
    seed = replicate_seed(cfg.base_seed, replicate)
    prior = build_prior(cfg)
    spec = build_geometry(cfg, prior)
    loss = build_loss(cfg, prior)
    task = make_task(
        cfg.k,
        cfg.d,
        cfg.x_bound,
        cfg.rho_star,
        prior,
        spec,
        seed=cfg.base_seed,
        class_scale=loss.class_scale,
    )
    schedule = build_schedule(cfg, spec, loss)
    U, G = geometry_constants(cfg, spec, loss)
    record = run(
        _instance_stream(task, cfg.n, seed),
        spec,
        schedule,
        loss,
        audit=cfg.audit,
        seed=seed,
        comparator=task.anchor,
    )
    est = estimate_risk(task, record.final_average, loss, cfg.n_mc, seed=seed + _MC_SEED_OFFSET)
    eq2 = float("inf") if cfg.n == 0 else bnd.oracle_bound(U, G, schedule)
    return {
        "k": cfg.k,
        "n": cfg.n,
        "geometry": cfg.geometry_kind,
        "replicate": replicate,
        "seed": seed,
        "empirical_excess": est.mean,
        "std_error": est.std_error,
        "bound_eq2": eq2,
        "bound_rate": closed_form_rate(cfg, schedule, U, G),
        "audit_min_residual": None
        if record.audit_residuals is None or record.audit_residuals.size == 0
        else float(record.audit_residuals.min()),
    }


def collect_rows(cfg: ExperimentConfig, workers: int) -> list[dict]:
    """Rows for all replicates of one configuration, sorted by replicate."""
    payloads = [(cfg, r) for r in range(cfg.replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_replicate_job, payloads))
    else:
        rows = [_replicate_job(p) for p in payloads]
    rows.sort(key=lambda row: (row["k"], row["replicate"]))
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_results_csv(path: str, rows: list[dict]) -> None:
    rows = sorted(rows, key=lambda row: (row["k"], row["replicate"]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in CSV_HEADER])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {key: _json_safe(val) for key, val in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(val) for val in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_report_json(path: str, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_json_safe(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def pooled_std_error(rows: list[dict]) -> float:
    """Standard error of the mean of the replicates' Monte Carlo means."""
    ses = np.array([row["std_error"] for row in rows])
    return float(np.sqrt((ses**2).sum()) / len(rows))


def fit_loglog_slope(ks: np.ndarray, means: np.ndarray) -> tuple[float, float]:
    """OLS slope of log(mean) vs log(k) with its standard error."""
    x = np.log(np.asarray(ks, dtype=float))
    y = np.log(np.asarray(means, dtype=float))
    xc = x - x.mean()
    sxx = float((xc**2).sum())
    slope = float((xc * (y - y.mean())).sum() / sxx)
    resid = y - (y.mean() + slope * xc)
    dof = len(x) - 2
    stderr = math.sqrt(float((resid**2).sum()) / dof / sxx) if dof > 0 else 0.0
    return slope, stderr


def bound_report(cfg: ExperimentConfig) -> BoundReport:
    """All applicable bound values for the configuration; never samples."""
    prior = build_prior(cfg)
    spec = build_geometry(cfg, prior)
    loss = build_loss(cfg, prior)
    schedule = build_schedule(cfg, spec, loss)
    U, G = geometry_constants(cfg, spec, loss)
    inp = bound_inputs(cfg)
    deviation_threshold = deviation_prob = None
    if cfg.theta is not None:
        from dataclasses import replace

        dev_inp = replace(
            inp,
            sigma2=cfg.sigma2 if cfg.sigma2 is not None else bnd.conservative_sigma2(G),
            g_bar=cfg.g_bar if cfg.g_bar is not None else G,
        )
        deviation_threshold, deviation_prob = bnd.deviation_bound(dev_inp, schedule, U=U)
    return BoundReport(
        U=U,
        G=G,
        alpha=schedule.alpha,
        eq2_bound=bnd.oracle_bound(U, G, schedule),
        constant_rate=closed_form_rate(cfg, schedule, U, G),
        deviation_threshold=deviation_threshold,
        deviation_prob=deviation_prob,
        B=bnd.sqrt_prior_sum(prior),
        weighted_rate=bnd.rate_weighted(inp, prior),
    )


def _summarize(rows: list[dict]) -> dict:
    by_k: dict[int, list[dict]] = {}
    for row in rows:
        by_k.setdefault(row["k"], []).append(row)
    per_k = []
    for k in sorted(by_k):
        group = by_k[k]
        per_k.append(
            {
                "k": k,
                "mean_excess": float(np.mean([r["empirical_excess"] for r in group])),
                "pooled_se": pooled_std_error(group),
                "bound_rate": group[0]["bound_rate"],
                "bound_eq2": group[0]["bound_eq2"],
                "replicates": len(group),
            }
        )
    return {"per_k": per_k}


def _print_summary(summary: dict) -> None:
    for entry in summary["per_k"]:
        print(
            f"k={entry['k']:>4d}  mean excess={entry['mean_excess']:.6g}  "
            f"pooled se={entry['pooled_se']:.3g}  rate bound={entry['bound_rate']:.6g}  "
            f"eq2 bound={entry['bound_eq2']:.6g}  replicates={entry['replicates']}"
        )


def _check_rows(summary: dict) -> bool:
    """Mean excess within bound + 3 pooled standard errors, for every k."""
    ok = True
    for entry in summary["per_k"]:
        limit = entry["bound_rate"] + 3.0 * entry["pooled_se"]
        if not entry["mean_excess"] <= limit:
            print(
                f"CHECK FAILED: k={entry['k']} mean excess {entry['mean_excess']:.6g} "
                f"> bound {limit:.6g}",
                file=sys.stderr,
            )
            ok = False
    return ok


def cmd_run(cfg: ExperimentConfig, out_dir: str, workers: int, check: bool) -> int:
    os.makedirs(out_dir, exist_ok=True)
    rows: list[dict] = []
    try:
        rows = collect_rows(cfg, workers)
    except ProxSolverError as err:
        write_results_csv(os.path.join(out_dir, "results.csv"), rows)
        print(f"numerical failure: {err} (residual {err.residual:.3g}); partial CSV written",
              file=sys.stderr)
        return 3
    summary = _summarize(rows)
    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    write_report_json(
        os.path.join(out_dir, "report.json"),
        {"bounds": bound_report(cfg).to_dict(), "summary": summary},
    )
    _print_summary(summary)
    if check and not _check_rows(summary):
        return 4
    return 0


def cmd_sweep_k(
    cfg: ExperimentConfig, k_grid: list[int], out_dir: str, workers: int, check: bool
) -> int:
    if len(k_grid) < 3 or any(b <= a for a, b in zip(k_grid, k_grid[1:])):
        raise ConfigError("k grid must be strictly increasing with at least 3 points")
    os.makedirs(out_dir, exist_ok=True)
    rows: list[dict] = []
    try:
        for k in k_grid:
            rows.extend(collect_rows(cfg.with_k(k), workers))
    except ProxSolverError as err:
        write_results_csv(os.path.join(out_dir, "results.csv"), rows)
        print(f"numerical failure: {err} (residual {err.residual:.3g}); partial CSV written",
              file=sys.stderr)
        return 3
    summary = _summarize(rows)
    means = np.array([entry["mean_excess"] for entry in summary["per_k"]])
    slope, stderr = fit_loglog_slope(np.array(k_grid, dtype=float), means)
    summary["slope"] = slope
    summary["slope_stderr"] = stderr
    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    write_report_json(
        os.path.join(out_dir, "report.json"),
        {"bounds": {str(k): bound_report(cfg.with_k(k)).to_dict() for k in k_grid},
         "summary": summary},
    )
    _print_summary(summary)
    print(f"log-log slope of mean excess vs k: {slope:.4f} +- {stderr:.4f}")
    if check and not _check_rows(summary):
        return 4
    return 0


def cmd_bounds(cfg: ExperimentConfig) -> int:
    report = bound_report(cfg).to_dict()
    print(json.dumps(_json_safe(report), indent=2, sort_keys=True))
    width = max(len(name) for name in report)
    for name, value in report.items():
        shown = "n/a" if value is None else f"{value:.12g}"
        print(f"{name:<{width}}  {shown}")
    return 0


def cmd_deviation(
    cfg: ExperimentConfig,
    theta: float | None,
    replicates: int | None,
    out_dir: str,
    workers: int,
    check: bool,
) -> int:
    theta = theta if theta is not None else cfg.theta
    if theta is None:
        raise ConfigError("deviation needs --theta or a [deviation] theta key")
    from dataclasses import replace

    cfg = replace(
        cfg,
        theta=theta,
        replicates=replicates if replicates is not None else cfg.replicates,
    )
    os.makedirs(out_dir, exist_ok=True)
    report = bound_report(cfg)
    rows: list[dict] = []
    try:
        rows = collect_rows(cfg, workers)
    except ProxSolverError as err:
        write_results_csv(os.path.join(out_dir, "results.csv"), rows)
        print(f"numerical failure: {err} (residual {err.residual:.3g}); partial CSV written",
              file=sys.stderr)
        return 3
    excesses = np.array([row["empirical_excess"] for row in rows])
    fraction = float((excesses > report.deviation_threshold).mean())
    n_rep = len(rows)
    binom_se = math.sqrt(max(report.deviation_prob * (1 - report.deviation_prob), 0.0) / n_rep)
    tail = {
        "theta": theta,
        "threshold": report.deviation_threshold,
        "prob_bound": report.deviation_prob,
        "empirical_fraction": fraction,
        "replicates": n_rep,
        "binomial_se": binom_se,
    }
    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    write_report_json(
        os.path.join(out_dir, "report.json"),
        {"bounds": report.to_dict(), "tail": tail},
    )
    print(
        f"theta={theta:g}  threshold={report.deviation_threshold:.6g}  "
        f"empirical exceedance={fraction:.4f}  bound={report.deviation_prob:.4f}"
    )
    if check and not fraction <= report.deviation_prob + 3.0 * binom_se:
        print("CHECK FAILED: empirical exceedance above the probability bound", file=sys.stderr)
        return 4
    return 0


def cmd_audit(cfg: ExperimentConfig, out_dir: str, workers: int) -> int:
    from dataclasses import replace

    cfg = replace(cfg, audit=True)
    os.makedirs(out_dir, exist_ok=True)
    try:
        rows = collect_rows(cfg, workers)
    except ProxSolverError as err:
        print(f"numerical failure: {err} (residual {err.residual:.3g})", file=sys.stderr)
        return 3
    residuals = [row["audit_min_residual"] for row in rows if row["audit_min_residual"] is not None]
    worst = min(residuals) if residuals else None
    for row in rows:
        print(f"replicate {row['replicate']}: min step residual = "
              f"{row['audit_min_residual']:.3e}")
    write_results_csv(os.path.join(out_dir, "results.csv"), rows)
    write_report_json(
        os.path.join(out_dir, "report.json"),
        {"audit": {"worst_residual": worst, "replicates": len(rows)}},
    )
    if worst is not None and worst < -1e-7:
        print(f"audit failure: worst step residual {worst:.3e} < -1e-7", file=sys.stderr)
        return 3
    print(f"audit ok: worst step residual = {worst:.3e}" if worst is not None
          else "audit ok: no steps taken")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirrorclass",
        description="Mirror descent experiments for multiclass margin classification",
    )
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--out", default="out", help="output directory (default: out)")
    parser.add_argument("--workers", type=int, default=1, help="parallel replicate workers")
    parser.add_argument("--seed", type=int, default=None, help="override run.base_seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="seeded replicate runs with CSV/JSON output")
    p_run.add_argument("--check", action="store_true",
                       help="exit 4 if mean excess exceeds the rate bound + 3 se")

    p_sweep = sub.add_parser("sweep-k", help="repeat runs over a grid of class counts")
    p_sweep.add_argument("--k-grid", required=True,
                         help="comma-separated strictly increasing class counts, >= 3 values")
    p_sweep.add_argument("--check", action="store_true",
                         help="exit 4 if any k exceeds its rate bound + 3 se")

    sub.add_parser("bounds", help="print the theoretical bound report (no sampling)")

    p_dev = sub.add_parser("deviation", help="empirical tail vs the deviation bound")
    p_dev.add_argument("--theta", type=float, default=None)
    p_dev.add_argument("--replicates", type=int, default=None)
    p_dev.add_argument("--check", action="store_true",
                       help="exit 4 if the exceedance fraction beats the bound + 3 se")

    sub.add_parser("audit", help="run with per-step inequality audits enabled")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.command == "run":
            return cmd_run(cfg, args.out, args.workers, args.check)
        if args.command == "sweep-k":
            try:
                k_grid = [int(v) for v in args.k_grid.split(",")]
            except ValueError:
                raise ConfigError(f"cannot parse --k-grid {args.k_grid!r}") from None
            return cmd_sweep_k(cfg, k_grid, args.out, args.workers, args.check)
        if args.command == "bounds":
            return cmd_bounds(cfg)
        if args.command == "deviation":
            return cmd_deviation(cfg, args.theta, args.replicates, args.out,
                                 args.workers, args.check)
        if args.command == "audit":
            return cmd_audit(cfg, args.out, args.workers)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
