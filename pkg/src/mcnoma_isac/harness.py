"""Monte Carlo orchestration, result persistence, and figure-data export.

All output files start with a comment header carrying the config hash, seed,
and artifact version; given identical inputs the data sections are
byte-identical.  JSON is used for structured reports, CSV for plot data.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import SystemConfig, dbm_to_watt, preset_config
from .metrics import beampattern
from .optimizer import SolveReport, run, run_baseline
from .scenario import build_scenario

SCHEMES = ("joint", "no-an", "ns-an", "sc-noma")

TRIAL_COLUMNS = [
    "trial", "seed", "scheme", "status", "min_rate", "objective",
    "iterations", "recovery_quality", "worst_crb", "max_leakage_excess",
]


def load_config(spec: str | Path) -> SystemConfig:
    """A preset name ('desk-small', 'paper-default') or a JSON file path."""
    try:
        return preset_config(str(spec))
    except KeyError:
        return SystemConfig.from_json(spec)


def _headers(config: SystemConfig, seed) -> list[str]:
    return [
        f"# config_hash={config.config_hash()}",
        f"# seed={seed}",
        f"# version={__version__}",
    ]


def run_trial(config: SystemConfig, seed: int, scheme: str = "joint") -> SolveReport:
    cfg = config.replace(seed=seed)
    realization = build_scenario(cfg, seed)
    if scheme == "joint":
        return run(realization, cfg)
    return run_baseline(scheme, realization, cfg)


# ---------------------------------------------------------------------------
# single-trial artifacts


def write_report_json(report: SolveReport, config: SystemConfig, path: str | Path) -> None:
    data = report.to_json_dict()
    data.pop("wall_time", None)  # keep identical inputs byte-identical
    doc = {
        "meta": {
            "config_hash": config.config_hash(),
            "seed": report.seed,
            "version": __version__,
        },
        "data": data,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_convergence_csv(report: SolveReport, config: SystemConfig, path: str | Path) -> None:
    with open(path, "w", newline="") as f:
        for line in _headers(config, report.seed):
            f.write(line + "\n")
        w = csv.writer(f)
        w.writerow(["iteration", "objective", "min_rate"])
        for row in report.iterates:
            w.writerow([row["iteration"], repr(row["objective"]), repr(row["min_rate"])])


def write_beampattern_csv(
    report: SolveReport, config: SystemConfig, path: str | Path, num_points: int = 361
) -> None:
    if report.solution is None:
        raise ValueError("report carries no recovered solution")
    grid = np.linspace(-math.pi / 2, math.pi / 2, num_points)
    rows = beampattern(report.solution, grid)
    with open(path, "w", newline="") as f:
        for line in _headers(config, report.seed):
            f.write(line + "\n")
        w = csv.writer(f)
        w.writerow(["angle_deg", "info_amp", "an_amp"])
        for theta, info, an in rows:
            w.writerow([repr(math.degrees(theta)), repr(info), repr(an)])


def write_audit_json(report: SolveReport, config: SystemConfig, path: str | Path) -> None:
    doc = {
        "meta": {
            "config_hash": config.config_hash(),
            "seed": report.seed,
            "version": __version__,
        },
        "audit": report.to_json_dict()["audit"],
        "status": report.status,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_single(
    config: SystemConfig, seed: int, scheme: str = "joint", out_dir: str | Path = "."
) -> SolveReport:
    """`run` subcommand: one trial plus its JSON/CSV artifacts."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_trial(config, seed, scheme)
    stem = f"{scheme}_seed{seed}"
    write_report_json(report, config, out / f"{stem}_report.json")
    write_convergence_csv(report, config, out / f"{stem}_convergence.csv")
    write_audit_json(report, config, out / f"{stem}_audit.json")
    if report.solution is not None:
        write_beampattern_csv(report, config, out / f"{stem}_beampattern.csv")
    return report


# ---------------------------------------------------------------------------
# Monte Carlo


def _trial_row(args) -> dict:
    config, base_seed, trial, scheme = args
    seed = base_seed + trial
    row = {c: "" for c in TRIAL_COLUMNS}
    row.update(trial=trial, seed=seed, scheme=scheme)
    user_fields = {}
    try:
        report = run_trial(config, seed, scheme)
        row["status"] = report.status
        row["min_rate"] = report.min_rate
        row["objective"] = report.objective
        row["iterations"] = report.num_iterations
        row["recovery_quality"] = report.recovery_quality
        if report.audit:
            row["worst_crb"] = report.audit["c6_crb"]["worst_crb"]
            row["max_leakage_excess"] = report.audit["max_leakage_excess"]
            for k, r in enumerate(report.audit["c4_rate"]["worst_rates"]):
                user_fields[f"rate_user{k}"] = r
            for k, l in enumerate(report.audit["c5_leakage"]["worst_leakage"]):
                user_fields[f"leakage_user{k}"] = l
    except Exception as exc:  # a failed trial is flagged, the run continues
        row["status"] = f"error:{type(exc).__name__}"
    row.update(user_fields)
    return row


def montecarlo(
    config: SystemConfig,
    trials: int,
    base_seed: int,
    scheme: str = "joint",
    parallel: int = 1,
) -> list[dict]:
    """T independent trials with deterministic per-trial seeds base + index."""
    jobs = [(config, base_seed, t, scheme) for t in range(trials)]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_trial_row, jobs))
    else:
        rows = [_trial_row(j) for j in jobs]
    rows.sort(key=lambda r: r["trial"])
    return rows


def write_trials_csv(
    rows: list[dict], config: SystemConfig, base_seed: int, path: str | Path
) -> None:
    columns = list(TRIAL_COLUMNS)
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    numeric = [
        c for c in columns
        if c not in ("trial", "seed", "scheme", "status")
        and any(isinstance(r.get(c), (int, float)) for r in rows)
    ]
    with open(path, "w", newline="") as f:
        for line in _headers(config, base_seed):
            f.write(line + "\n")
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c, "")) for c in columns])
        for label, agg in (("mean", statistics.fmean), ("std", _std)):
            out = []
            for c in columns:
                if c == "trial":
                    out.append(label)
                elif c in numeric:
                    vals = [r[c] for r in rows
                            if isinstance(r.get(c), (int, float)) and math.isfinite(r[c])]
                    out.append(repr(agg(vals)) if vals else "")
                else:
                    out.append("")
            w.writerow(out)


def _std(vals):
    return statistics.pstdev(vals) if len(vals) > 1 else 0.0


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


# ---------------------------------------------------------------------------
# parameter sweeps


def apply_sweep_param(config: SystemConfig, param: str, value: float) -> SystemConfig:
    if param == "pmax_dbm":
        return config.replace(bs_power_max=dbm_to_watt(value))
    if param == "chi":
        return config.replace(csi_error_fraction=value)
    raise ValueError(f"unknown sweep parameter '{param}' (use pmax_dbm or chi)")


def sweep(
    config: SystemConfig,
    param: str,
    values: list[float],
    trials: int,
    base_seed: int,
    schemes: tuple[str, ...] = ("joint",),
) -> list[dict]:
    """Per-value, per-scheme mean/std of the audited min-rate (plot data)."""
    out = []
    for value in values:
        cfg = apply_sweep_param(config, param, value)
        for scheme in schemes:
            rows = montecarlo(cfg, trials, base_seed, scheme)
            ok = [r for r in rows if isinstance(r.get("min_rate"), float)
                  and math.isfinite(r["min_rate"])]
            rates = [r["min_rate"] for r in ok]
            excesses = [r["max_leakage_excess"] for r in ok
                        if isinstance(r.get("max_leakage_excess"), float)]
            out.append({
                "param": param,
                "value": value,
                "scheme": scheme,
                "trials": trials,
                "ok_trials": len(ok),
                "mean_min_rate": statistics.fmean(rates) if rates else math.nan,
                "std_min_rate": _std(rates) if rates else math.nan,
                "max_leakage_excess": max(excesses) if excesses else math.nan,
            })
    return out


def write_sweep_csv(
    rows: list[dict], config: SystemConfig, base_seed: int, path: str | Path
) -> None:
    columns = ["param", "value", "scheme", "trials", "ok_trials",
               "mean_min_rate", "std_min_rate", "max_leakage_excess"]
    with open(path, "w", newline="") as f:
        for line in _headers(config, base_seed):
            f.write(line + "\n")
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


# ---------------------------------------------------------------------------
# validation suite


def validate(config: SystemConfig, seed: int, audit_samples: int = 1000) -> dict:
    """Full oracle suite; `passed` is False on any failure."""
    from .oracle import (
        audit_constraints,
        crb_finite_difference,
        exhaustive_small_instance,
        verify_aux_optimality,
    )
    from .uncertainty import build_error_samples, fresh_error_samples

    results: dict = {}
    aux_rep = verify_aux_optimality(num_instances=100, seed=seed)
    results["aux_optimality"] = aux_rep

    cfg = config.replace(seed=seed)
    realization = build_scenario(cfg, seed)
    report = run(realization, cfg)
    results["run_status"] = report.status
    ran_ok = report.solution is not None
    if ran_ok:
        fresh = fresh_error_samples(realization, cfg, audit_samples, seed + 1)
        audit = audit_constraints(report.solution, realization, cfg, fresh,
                                  rate_slack=0.05)
        results["fresh_audit"] = {k: v for k, v in audit.items()
                                  if k in ("min_rate", "max_leakage_excess", "passed")}
        fd = crb_finite_difference(report.solution.z_sense, realization, cfg)
        results["crb_finite_difference"] = fd
        results["crb_fd_pass"] = fd["crb_rel_error"] <= 1e-4

    small = (cfg.num_users <= 3 and cfg.num_subcarriers <= 2 and cfg.bs_antennas <= 3)
    if small and ran_ok:
        samples = build_error_samples(realization, cfg, seed)
        best = exhaustive_small_instance(realization, cfg, samples, seed=seed)
        results["exhaustive_best"] = best["min_rate"]
        results["exhaustive_ratio"] = (
            report.min_rate / best["min_rate"] if best["min_rate"] > 0 else math.inf
        )

    results["passed"] = bool(
        aux_rep["passed"]
        and ran_ok
        and results.get("fresh_audit", {}).get("passed", False)
        and results.get("crb_fd_pass", False)
    )
    return results
