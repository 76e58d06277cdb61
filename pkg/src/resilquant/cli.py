"""Batch pipeline front end: simulate, preprocess, resilience, fit, report.

Stages communicate through files.  simulate writes run CSVs plus a manifest;
preprocess median-filters every run and writes one seed-averaged CSV per
condition cell plus a processed manifest; resilience and fit pair attack
cells with their baselines and write a JSON report; report turns a report
into delimited tables and rendered figures.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import (
    AlignmentError,
    ConfigError,
    DomainError,
    FitInfeasibleError,
    NoAttackDetectedError,
    NoRecoveryError,
    PairingError,
    ResilquantError,
)
from .fitting import fit_ratio_curve, model_curve
from .metrics import (
    UtilityWeights,
    bootstrap_ci,
    ratio_curve,
    resilience_r,
    weighted_resilience,
)
from .numerics import TimeSeries, running_median
from .report import (
    FitPhase,
    FitSummary,
    ReportEntry,
    ResilienceReport,
    SignalMeasure,
    read_report,
    render_figures,
    write_report,
    write_tables,
)
from .synth import (
    Attack,
    GridDesign,
    Terrain,
    Truck,
    generate_grid,
    load_design,
    read_run_csv,
)

PROCESSED_SCHEMA = "resilquant-processed/1"

_RUN_ROW_KEYS = (
    "file",
    "truck",
    "terrain",
    "attack",
    "cargo_kg",
    "seed",
    "attack_start_s",
    "duration_s",
)

_GRID_TOL = 1e-9


def _axis_rank(truck: str, terrain: str, attack: str, cargo_kg: int) -> Tuple:
    """Canonical design order, used to keep every output deterministic."""
    try:
        return (
            list(Truck).index(Truck(truck)),
            list(Terrain).index(Terrain(terrain)),
            list(Attack).index(Attack(attack)),
            int(cargo_kg),
        )
    except ValueError as exc:
        raise ConfigError(f"unknown condition field: {exc}") from None


def _cell_name(truck: str, terrain: str, attack: str, cargo_kg: int) -> str:
    return f"{truck}_{terrain}_{attack}_{cargo_kg}kg"


def _cell_label(cell: dict) -> str:
    return f"{cell['truck']}/{cell['terrain']}/{cell['attack']}/{cell['cargo_kg']}kg"


def _series_dict(columns: Dict[str, np.ndarray], path) -> Dict[str, TimeSeries]:
    """Columns to per-signal TimeSeries, insisting on a uniform time grid."""
    t = columns["time_s"]
    if t.size < 2:
        raise ConfigError(f"{path}: needs at least two samples")
    dt = float(t[1] - t[0])
    if dt <= 0 or np.max(np.abs(np.diff(t) - dt)) > _GRID_TOL:
        raise AlignmentError(f"{path}: time grid is not uniform")
    return {
        name: TimeSeries(float(t[0]), dt, values)
        for name, values in columns.items()
        if name != "time_s"
    }


def _check_same_grid(t_a: np.ndarray, file_a: str, t_b: np.ndarray, file_b: str):
    if t_a.size != t_b.size or float(np.max(np.abs(t_a - t_b))) > _GRID_TOL:
        raise AlignmentError(f"time grids differ between {file_a} and {file_b}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(
    config: Optional[Path],
    out: Path,
    jobs: int = 1,
    seed: Optional[int] = None,
) -> List[dict]:
    design = load_design(config) if config is not None else GridDesign()
    if seed is not None:
        design = replace(design, base_seed=int(seed))
    return generate_grid(design, out, jobs=jobs)


# ---------------------------------------------------------------------------
# preprocess
# ---------------------------------------------------------------------------


def _preprocess_cell(task: dict) -> dict:
    manifest_dir = Path(task["manifest_dir"])
    out_dir = Path(task["out_dir"])
    rows = task["rows"]
    window = task["median_window_s"]
    first = rows[0]

    ref_times = None
    ref_file = None
    names: List[str] = []
    acc: Dict[str, np.ndarray] = {}
    for row in rows:
        columns = read_run_csv(manifest_dir / row["file"])
        series = _series_dict(columns, row["file"])
        if ref_times is None:
            ref_times = columns["time_s"]
            ref_file = row["file"]
            names = sorted(series)
            acc = {name: np.zeros(ref_times.size) for name in names}
        else:
            _check_same_grid(columns["time_s"], ref_file, ref_times, row["file"])
            if sorted(series) != names:
                raise AlignmentError(
                    f"{row['file']}: signal columns differ from {ref_file}"
                )
        for name in names:
            acc[name] += running_median(series[name], window).values

    mean = {name: acc[name] / len(rows) for name in names}
    cell_file = (
        _cell_name(first["truck"], first["terrain"], first["attack"], first["cargo_kg"])
        + "_avg.csv"
    )
    frame = pd.DataFrame({"time_s": ref_times, **mean})
    frame.to_csv(out_dir / cell_file, index=False, lineterminator="\n")
    return {
        "file": cell_file,
        "truck": first["truck"],
        "terrain": first["terrain"],
        "attack": first["attack"],
        "cargo_kg": int(first["cargo_kg"]),
        "n_runs": len(rows),
        "seeds": [int(row["seed"]) for row in rows],
        "attack_start_s": float(first["attack_start_s"]),
        "duration_s": float(first["duration_s"]),
        "runs": [
            {
                "seed": int(row["seed"]),
                "file": os.path.relpath(manifest_dir / row["file"], out_dir),
            }
            for row in rows
        ],
    }


def cmd_preprocess(
    manifest: Path,
    out: Path,
    median_window_s: float = 72.0,
    jobs: int = 1,
) -> dict:
    if not median_window_s > 0:
        raise DomainError(f"median window must be positive, got {median_window_s!r}")
    try:
        rows = json.loads(Path(manifest).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{manifest}: manifest parse error: {exc}") from None
    if not isinstance(rows, list) or not rows:
        raise ConfigError(f"{manifest}: expected a non-empty list of run rows")
    for i, row in enumerate(rows):
        missing = [key for key in _RUN_ROW_KEYS if key not in row]
        if missing:
            raise ConfigError(f"{manifest}: run row {i} missing keys {missing}")

    cells: Dict[Tuple, List[dict]] = {}
    for row in rows:
        key = (row["truck"], row["terrain"], row["attack"], int(row["cargo_kg"]))
        cells.setdefault(key, []).append(row)
    for key, cell_rows in cells.items():
        cell_rows.sort(key=lambda r: int(r["seed"]))
        seeds = [int(r["seed"]) for r in cell_rows]
        if len(set(seeds)) != len(seeds):
            raise ConfigError(f"duplicate seeds in cell {'/'.join(map(str, key))}")
        starts = {float(r["attack_start_s"]) for r in cell_rows}
        if len(starts) != 1:
            raise ConfigError(
                f"attack_start_s differs across seeds in cell {'/'.join(map(str, key))}"
            )

    ordered = sorted(cells, key=lambda key: _axis_rank(*key))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [
        {
            "manifest_dir": str(Path(manifest).parent),
            "out_dir": str(out),
            "rows": cells[key],
            "median_window_s": float(median_window_s),
        }
        for key in ordered
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cell_rows_out = list(pool.map(_preprocess_cell, tasks))
    else:
        cell_rows_out = [_preprocess_cell(task) for task in tasks]

    doc = {
        "schema": PROCESSED_SCHEMA,
        "median_window_s": float(median_window_s),
        "cells": cell_rows_out,
    }
    with open(out / "processed.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


# ---------------------------------------------------------------------------
# resilience / fit
# ---------------------------------------------------------------------------


def _read_cell_series(processed_dir: Path, cell: dict) -> Dict[str, TimeSeries]:
    columns = read_run_csv(processed_dir / cell["file"])
    return _series_dict(columns, cell["file"])


def _per_seed_values(
    processed_dir: Path,
    attack_cell: dict,
    baseline_cell: dict,
    names: List[str],
    window: Tuple[Optional[float], Optional[float]],
    median_window_s: float,
) -> Dict[str, List[float]]:
    """Per-seed resilience values from the raw (unaveraged) paired runs."""
    attack_runs = {run["seed"]: run["file"] for run in attack_cell.get("runs", [])}
    baseline_runs = {run["seed"]: run["file"] for run in baseline_cell.get("runs", [])}
    common = sorted(set(attack_runs) & set(baseline_runs))
    values: Dict[str, List[float]] = {name: [] for name in names}
    for seed in common:
        pair = []
        for file in (attack_runs[seed], baseline_runs[seed]):
            series = _series_dict(read_run_csv(processed_dir / file), file)
            pair.append(
                {name: running_median(series[name], median_window_s) for name in names}
            )
        for name in names:
            att, base = pair[0][name], pair[1][name]
            w0 = window[0] if window[0] is not None else att.t0
            w1 = window[1] if window[1] is not None else att.t_end
            values[name].append(resilience_r(att, base, w0, w1))
    return values


def _fit_signal(
    ratio: TimeSeries,
    refine: bool,
    curves_dir: Path,
    curve_name: str,
) -> FitSummary:
    try:
        fit = fit_ratio_curve(ratio, refine=refine)
    except (NoAttackDetectedError, NoRecoveryError, FitInfeasibleError) as exc:
        return FitSummary(
            degenerate=True,
            reason=str(exc),
            phases=(FitPhase(ratio.t0, ratio.t_end, 0.0, 0.0, None),),
        )
    phases = []
    for t_from, t_to, M, B in fit.phases:
        total = M + B
        phases.append(FitPhase(t_from, t_to, M, B, B / total if total > 0 else None))
    model = model_curve(ratio, fit)
    curves_dir.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {"time_s": ratio.times(), "observed": ratio.values, "model": model.values}
    )
    frame.to_csv(curves_dir / curve_name, index=False, lineterminator="\n")
    return FitSummary(
        degenerate=False,
        refined=fit.refined,
        curve_file=f"{curves_dir.name}/{curve_name}",
        t_star=fit.t_star,
        m=fit.m,
        t1=fit.t1,
        t2=fit.t2,
        rmse=fit.rmse,
        phases=tuple(phases),
    )


def _analyze_cell(task: dict) -> ReportEntry:
    attack_cell = task["attack_cell"]
    label = _cell_label(attack_cell)
    try:
        return _analyze_cell_inner(task)
    except ResilquantError as exc:
        raise exc.__class__(f"{label}: {exc}") from None


def _analyze_cell_inner(task: dict) -> ReportEntry:
    processed_dir = Path(task["processed_dir"])
    attack_cell = task["attack_cell"]
    baseline_cell = task["baseline_cell"]
    window = tuple(task["window"])
    weights_items = task["weights"]
    median_window_s = task["median_window_s"]
    fit_task = task["fit"]

    attack_series = _read_cell_series(processed_dir, attack_cell)
    baseline_series = _read_cell_series(processed_dir, baseline_cell)
    names = sorted(attack_series)
    if sorted(baseline_series) != names:
        raise AlignmentError(
            f"signal columns differ between {attack_cell['file']} "
            f"and {baseline_cell['file']}"
        )
    first = attack_series[names[0]]
    base_first = baseline_series[names[0]]
    _check_same_grid(
        first.times(), attack_cell["file"], base_first.times(), baseline_cell["file"]
    )
    w0 = window[0] if window[0] is not None else first.t0
    w1 = window[1] if window[1] is not None else first.t_end

    point = {name: resilience_r(attack_series[name], baseline_series[name], w0, w1) for name in names}
    per_seed = _per_seed_values(
        processed_dir, attack_cell, baseline_cell, names, window, median_window_s
    )

    signals = {}
    for name in names:
        values = per_seed[name]
        if len(values) >= 2:
            ci_low, ci_high = bootstrap_ci(values)
        else:
            ci_low = ci_high = point[name]
        signals[name] = dict(R=point[name], ci_low=ci_low, ci_high=ci_high)

    weighted = None
    if weights_items is not None:
        weighted = weighted_resilience(
            list(point.items()), UtilityWeights(tuple(weights_items))
        )

    fits: Dict[str, FitSummary] = {}
    if fit_task is not None:
        cell = _cell_name(
            attack_cell["truck"],
            attack_cell["terrain"],
            attack_cell["attack"],
            attack_cell["cargo_kg"],
        )
        for name in names:
            ratio = ratio_curve(attack_series[name], baseline_series[name])
            fits[name] = _fit_signal(
                ratio,
                refine=fit_task["refine"],
                curves_dir=Path(fit_task["curves_dir"]),
                curve_name=f"fit_{cell}_{name}.csv",
            )

    return ReportEntry(
        truck=attack_cell["truck"],
        terrain=attack_cell["terrain"],
        attack=attack_cell["attack"],
        cargo_kg=attack_cell["cargo_kg"],
        n_runs=int(attack_cell["n_runs"]),
        signals={name: SignalMeasure(**stats) for name, stats in signals.items()},
        weighted_R=weighted,
        fits=fits,
    )


def _load_processed(processed: Path) -> dict:
    try:
        doc = json.loads(Path(processed).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{processed}: parse error: {exc}") from None
    if not isinstance(doc, dict) or doc.get("schema") != PROCESSED_SCHEMA:
        raise ConfigError(
            f"{processed}: not a {PROCESSED_SCHEMA} dataset (run preprocess first)"
        )
    return doc


def _run_analysis(
    processed: Path,
    out: Path,
    window_start: Optional[float],
    window_end: Optional[float],
    weights: Optional[UtilityWeights],
    jobs: int,
    refine: bool,
    with_fits: bool,
) -> ResilienceReport:
    doc = _load_processed(processed)
    cells = doc["cells"]
    seen = set()
    for cell in cells:
        key = (cell["truck"], cell["terrain"], cell["attack"], int(cell["cargo_kg"]))
        if key in seen:
            raise ConfigError(f"duplicate cell {_cell_label(cell)} in {processed}")
        seen.add(key)

    baselines = {
        (c["truck"], c["terrain"], int(c["cargo_kg"])): c
        for c in cells
        if c["attack"] == Attack.BASELINE.value
    }
    attack_cells = sorted(
        (c for c in cells if c["attack"] != Attack.BASELINE.value),
        key=lambda c: _axis_rank(c["truck"], c["terrain"], c["attack"], c["cargo_kg"]),
    )

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    curves_dir = out / "curves"
    tasks = []
    for cell in attack_cells:
        key = (cell["truck"], cell["terrain"], int(cell["cargo_kg"]))
        baseline = baselines.get(key)
        if baseline is None:
            raise PairingError(f"no Baseline cell for {_cell_label(cell)}")
        tasks.append(
            {
                "processed_dir": str(Path(processed).parent),
                "attack_cell": cell,
                "baseline_cell": baseline,
                "window": (window_start, window_end),
                "weights": None if weights is None else weights.items,
                "median_window_s": float(doc["median_window_s"]),
                "fit": {"curves_dir": str(curves_dir), "refine": refine}
                if with_fits
                else None,
            }
        )

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(_analyze_cell, tasks))
    else:
        entries = [_analyze_cell(task) for task in tasks]

    report = ResilienceReport(
        median_window_s=float(doc["median_window_s"]),
        entries=entries,
        window_start_s=window_start,
        window_end_s=window_end,
        weights=None if weights is None else weights.as_dict(),
    )
    write_report(report, out / "report.json")
    return report


def cmd_resilience(
    processed: Path,
    out: Path,
    window_start: Optional[float] = None,
    window_end: Optional[float] = None,
    weights: Optional[UtilityWeights] = None,
    jobs: int = 1,
) -> ResilienceReport:
    return _run_analysis(
        processed, out, window_start, window_end, weights, jobs,
        refine=False, with_fits=False,
    )


def cmd_fit(
    processed: Path,
    out: Path,
    window_start: Optional[float] = None,
    window_end: Optional[float] = None,
    weights: Optional[UtilityWeights] = None,
    refine: bool = False,
    jobs: int = 1,
) -> ResilienceReport:
    return _run_analysis(
        processed, out, window_start, window_end, weights, jobs,
        refine=refine, with_fits=True,
    )


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(report_path: Path, out: Path) -> List[Path]:
    report = read_report(report_path)
    out = Path(out)
    written = write_tables(report, out)
    written += render_figures(report, out, curve_root=Path(report_path).parent)
    return written


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------


def parse_weights(text: str) -> UtilityWeights:
    """Parse 'name=weight,name=weight' into utility weights."""
    items = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, sep, value = part.partition("=")
        if not sep:
            raise ConfigError(f"weights entry {part!r} must look like name=value")
        try:
            items.append((name.strip(), float(value)))
        except ValueError:
            raise ConfigError(f"weights entry {part!r} has a non-numeric value") from None
    if not items:
        raise ConfigError("weights must name at least one objective")
    return UtilityWeights(tuple(items))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resilquant",
        description="Quantify cyber resilience from performance time series.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic run grid")
    p.add_argument("--config", type=Path, help="design config (YAML); defaults to the full grid")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, help="override the design's base seed")

    p = sub.add_parser("preprocess", help="median-filter runs and average seeds")
    p.add_argument("--manifest", type=Path, required=True, help="run manifest JSON")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--median-window", type=float, default=72.0, help="filter window in seconds")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    for name, help_text in (
        ("resilience", "compute the resilience measure per condition"),
        ("fit", "resilience plus model parameter extraction"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest", type=Path, required=True, help="processed manifest JSON")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--window-start", type=float, help="measure window start (s)")
        p.add_argument("--window-end", type=float, help="measure window end (s)")
        p.add_argument("--weights", type=str, help="utility weights, e.g. fuel_efficiency=0.5,speed=0.5")
        p.add_argument("--jobs", type=int, default=1, help="worker processes")
        if name == "fit":
            p.add_argument("--refine", action="store_true", help="least-squares polish")

    p = sub.add_parser("report", help="emit tables and figures from a report")
    p.add_argument("--manifest", type=Path, required=True, help="report JSON")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    return parser


def _dispatch(args: argparse.Namespace) -> int:
    jobs = getattr(args, "jobs", 1)
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    if args.command == "simulate":
        manifest = cmd_simulate(args.config, args.out, jobs=jobs, seed=args.seed)
        print(f"wrote {len(manifest)} runs to {args.out}")
    elif args.command == "preprocess":
        doc = cmd_preprocess(
            args.manifest, args.out, median_window_s=args.median_window, jobs=jobs
        )
        print(f"wrote {len(doc['cells'])} averaged cells to {args.out}")
    elif args.command in ("resilience", "fit"):
        weights = parse_weights(args.weights) if args.weights else None
        if args.command == "resilience":
            report = cmd_resilience(
                args.manifest,
                args.out,
                window_start=args.window_start,
                window_end=args.window_end,
                weights=weights,
                jobs=jobs,
            )
        else:
            report = cmd_fit(
                args.manifest,
                args.out,
                window_start=args.window_start,
                window_end=args.window_end,
                weights=weights,
                refine=args.refine,
                jobs=jobs,
            )
        print(f"wrote report.json with {len(report.entries)} entries to {args.out}")
    elif args.command == "report":
        written = cmd_report(args.manifest, args.out)
        names = ", ".join(path.name for path in written)
        print(f"wrote {names} to {args.out}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ResilquantError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
