"""Analysis report schema with JSON, tidy-table, and figure emission.

A report collects one entry per analyzed attack condition: the resilience
measure per signal with its confidence interval, an optional utility-weighted
combination, and (when fitting ran) the extracted model parameters.  The same
content round-trips through a JSON document and through a set of delimited
tables meant for external plotting tools; figures rendered here are a
convenience view of the tables.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ConfigError, DomainError

__all__ = [
    "SCHEMA",
    "SignalMeasure",
    "FitPhase",
    "FitSummary",
    "ReportEntry",
    "ResilienceReport",
    "write_report",
    "read_report",
    "write_tables",
    "read_tables",
    "render_figures",
]

SCHEMA = "resilquant-report/1"

# Value used in table rows that aggregate over signals rather than naming one.
_ALL_SIGNALS = "all"


def _require_finite(label: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise DomainError(f"{label} must be finite, got {value!r}")
    return value


@dataclass
class SignalMeasure:
    """Resilience measure for one signal with its confidence interval."""

    R: float
    ci_low: float
    ci_high: float

    def __post_init__(self):
        self.R = _require_finite("R", self.R)
        self.ci_low = _require_finite("ci_low", self.ci_low)
        self.ci_high = _require_finite("ci_high", self.ci_high)
        if self.R < 0:
            raise DomainError(f"R must be non-negative, got {self.R!r}")
        if self.ci_low > self.ci_high:
            raise DomainError(
                f"interval [{self.ci_low!r}, {self.ci_high!r}] is reversed"
            )


@dataclass
class FitPhase:
    """One fitted constant-impact phase and its implied equilibrium level."""

    t_from: float
    t_to: float
    M: float
    B: float
    equilibrium: Optional[float] = None

    def __post_init__(self):
        self.t_from = _require_finite("t_from", self.t_from)
        self.t_to = _require_finite("t_to", self.t_to)
        if not self.t_to > self.t_from:
            raise DomainError("phase needs positive duration")
        self.M = _require_finite("M", self.M)
        self.B = _require_finite("B", self.B)
        if self.M < 0 or self.B < 0:
            raise DomainError("phase impacts must be non-negative")
        if self.equilibrium is not None:
            self.equilibrium = _require_finite("equilibrium", self.equilibrium)


@dataclass
class FitSummary:
    """Outcome of fitting one signal's ratio curve.

    Degenerate summaries record why extraction was impossible (no attack
    signature, no recovery, infeasible fast fit) alongside an all-zero
    profile; successful ones carry the full parameter set.
    """

    degenerate: bool
    reason: str = ""
    refined: bool = False
    curve_file: str = ""
    t_star: Optional[float] = None
    m: Optional[float] = None
    t1: Optional[float] = None
    t2: Optional[float] = None
    rmse: Optional[float] = None
    phases: Tuple[FitPhase, ...] = ()

    def __post_init__(self):
        self.phases = tuple(self.phases)
        if self.degenerate:
            if not self.reason:
                raise DomainError("a degenerate fit must state its reason")
        else:
            missing = [
                name
                for name in ("t_star", "m", "t1", "t2", "rmse")
                if getattr(self, name) is None
            ]
            if missing or not self.phases:
                raise DomainError(
                    f"a successful fit needs phases and {missing or 'all scalars'}"
                )


@dataclass
class ReportEntry:
    """Results for one attack condition (truck, terrain, attack, cargo)."""

    truck: str
    terrain: str
    attack: str
    cargo_kg: int
    n_runs: int
    signals: Dict[str, SignalMeasure]
    weighted_R: Optional[float] = None
    fits: Dict[str, FitSummary] = field(default_factory=dict)

    def __post_init__(self):
        self.cargo_kg = int(self.cargo_kg)
        self.n_runs = int(self.n_runs)
        if self.n_runs < 1:
            raise DomainError(f"entry needs n_runs >= 1, got {self.n_runs}")
        if not self.signals:
            raise DomainError("entry needs at least one signal measure")
        if self.weighted_R is not None:
            self.weighted_R = _require_finite("weighted_R", self.weighted_R)

    @property
    def label(self) -> str:
        return f"{self.truck}/{self.terrain}/{self.attack}/{self.cargo_kg}kg"


@dataclass
class ResilienceReport:
    """Full pipeline output: per-condition entries plus shared metadata."""

    median_window_s: float
    entries: List[ReportEntry]
    window_start_s: Optional[float] = None
    window_end_s: Optional[float] = None
    weights: Optional[Dict[str, float]] = None

    def __post_init__(self):
        self.median_window_s = _require_finite("median_window_s", self.median_window_s)
        if self.median_window_s <= 0:
            raise DomainError("median_window_s must be positive")
        if self.window_start_s is not None:
            self.window_start_s = _require_finite("window_start_s", self.window_start_s)
        if self.window_end_s is not None:
            self.window_end_s = _require_finite("window_end_s", self.window_end_s)
        if (
            self.window_start_s is not None
            and self.window_end_s is not None
            and not self.window_end_s > self.window_start_s
        ):
            raise DomainError("analysis window must have positive length")


# ---------------------------------------------------------------------------
# JSON serialization
# ---------------------------------------------------------------------------


def _fit_to_doc(fit: FitSummary) -> dict:
    return {
        "degenerate": fit.degenerate,
        "reason": fit.reason,
        "refined": fit.refined,
        "curve_file": fit.curve_file,
        "t_star": fit.t_star,
        "m": fit.m,
        "t1": fit.t1,
        "t2": fit.t2,
        "rmse": fit.rmse,
        "phases": [
            {
                "t_from": p.t_from,
                "t_to": p.t_to,
                "M": p.M,
                "B": p.B,
                "equilibrium": p.equilibrium,
            }
            for p in fit.phases
        ],
    }


def _fit_from_doc(doc: dict) -> FitSummary:
    return FitSummary(
        degenerate=bool(doc["degenerate"]),
        reason=str(doc.get("reason", "")),
        refined=bool(doc.get("refined", False)),
        curve_file=str(doc.get("curve_file", "")),
        t_star=doc.get("t_star"),
        m=doc.get("m"),
        t1=doc.get("t1"),
        t2=doc.get("t2"),
        rmse=doc.get("rmse"),
        phases=tuple(
            FitPhase(p["t_from"], p["t_to"], p["M"], p["B"], p.get("equilibrium"))
            for p in doc.get("phases", [])
        ),
    )


def report_to_doc(report: ResilienceReport) -> dict:
    entries = []
    for entry in report.entries:
        entries.append(
            {
                "truck": entry.truck,
                "terrain": entry.terrain,
                "attack": entry.attack,
                "cargo_kg": entry.cargo_kg,
                "n_runs": entry.n_runs,
                "signals": {
                    name: {"R": s.R, "ci_low": s.ci_low, "ci_high": s.ci_high}
                    for name, s in entry.signals.items()
                },
                "weighted_R": entry.weighted_R,
                "fits": {name: _fit_to_doc(f) for name, f in entry.fits.items()},
            }
        )
    return {
        "schema": SCHEMA,
        "median_window_s": report.median_window_s,
        "window_start_s": report.window_start_s,
        "window_end_s": report.window_end_s,
        "weights": report.weights,
        "entries": entries,
    }


def report_from_doc(doc: dict, source: str = "report") -> ResilienceReport:
    if not isinstance(doc, dict) or doc.get("schema") != SCHEMA:
        raise ConfigError(f"{source}: not a {SCHEMA} document")
    try:
        entries = [
            ReportEntry(
                truck=str(e["truck"]),
                terrain=str(e["terrain"]),
                attack=str(e["attack"]),
                cargo_kg=e["cargo_kg"],
                n_runs=e["n_runs"],
                signals={
                    name: SignalMeasure(s["R"], s["ci_low"], s["ci_high"])
                    for name, s in e["signals"].items()
                },
                weighted_R=e.get("weighted_R"),
                fits={
                    name: _fit_from_doc(f) for name, f in e.get("fits", {}).items()
                },
            )
            for e in doc["entries"]
        ]
        weights = doc.get("weights")
        return ResilienceReport(
            median_window_s=doc["median_window_s"],
            entries=entries,
            window_start_s=doc.get("window_start_s"),
            window_end_s=doc.get("window_end_s"),
            weights=None if weights is None else {str(k): float(v) for k, v in weights.items()},
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{source}: malformed report document ({exc})") from None


def write_report(report: ResilienceReport, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(report_to_doc(report), indent=2, sort_keys=True) + "\n")
    return path


def read_report(path) -> ResilienceReport:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: report parse error: {exc}") from None
    return report_from_doc(doc, source=str(path))


# ---------------------------------------------------------------------------
# Tidy tables
# ---------------------------------------------------------------------------

_TABLE_HEADER = ["truck", "terrain", "attack", "cargo_kg", "signal", "statistic", "value"]


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_tables(report: ResilienceReport, out_dir) -> List[Path]:
    """Emit meta.csv, r_table.csv, and (when fits exist) fit_table.csv.

    The value column stores full-precision decimal text, so parsing the
    tables back reproduces every numeric field exactly.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    meta_path = out_dir / "meta.csv"
    with open(meta_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["key", "value"])
        writer.writerow(["schema", SCHEMA])
        writer.writerow(["median_window_s", _fmt(report.median_window_s)])
        writer.writerow(["window_start_s", _fmt(report.window_start_s)])
        writer.writerow(["window_end_s", _fmt(report.window_end_s)])
        for name, weight in (report.weights or {}).items():
            writer.writerow([f"weight:{name}", _fmt(float(weight))])
    written.append(meta_path)

    r_path = out_dir / "r_table.csv"
    with open(r_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_TABLE_HEADER)
        for entry in report.entries:
            head = [entry.truck, entry.terrain, entry.attack, str(entry.cargo_kg)]
            for name in sorted(entry.signals):
                s = entry.signals[name]
                writer.writerow(head + [name, "R", _fmt(s.R)])
                writer.writerow(head + [name, "ci_low", _fmt(s.ci_low)])
                writer.writerow(head + [name, "ci_high", _fmt(s.ci_high)])
            writer.writerow(head + [_ALL_SIGNALS, "n_runs", _fmt(entry.n_runs)])
            if entry.weighted_R is not None:
                writer.writerow(head + [_ALL_SIGNALS, "weighted_R", _fmt(entry.weighted_R)])
    written.append(r_path)

    if any(entry.fits for entry in report.entries):
        fit_path = out_dir / "fit_table.csv"
        with open(fit_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_TABLE_HEADER)
            for entry in report.entries:
                head = [entry.truck, entry.terrain, entry.attack, str(entry.cargo_kg)]
                for name in sorted(entry.fits):
                    fit = entry.fits[name]
                    rows = [
                        ("degenerate", fit.degenerate),
                        ("reason", fit.reason),
                        ("refined", fit.refined),
                        ("curve_file", fit.curve_file),
                    ]
                    for scalar in ("t_star", "m", "t1", "t2", "rmse"):
                        value = getattr(fit, scalar)
                        if value is not None:
                            rows.append((scalar, value))
                    rows.append(("n_phases", len(fit.phases)))
                    for i, phase in enumerate(fit.phases, start=1):
                        rows.extend(
                            [
                                (f"phase{i}_t_from", phase.t_from),
                                (f"phase{i}_t_to", phase.t_to),
                                (f"phase{i}_M", phase.M),
                                (f"phase{i}_B", phase.B),
                                (f"phase{i}_equilibrium", phase.equilibrium),
                            ]
                        )
                    for statistic, value in rows:
                        writer.writerow(head + [name, statistic, _fmt(value)])
        written.append(fit_path)
    return written


def _read_rows(path: Path) -> List[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _TABLE_HEADER:
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames!r}")
        return list(reader)


def read_tables(out_dir) -> ResilienceReport:
    """Rebuild a report from the tables written by write_tables."""
    out_dir = Path(out_dir)
    meta = {}
    meta_path = out_dir / "meta.csv"
    with open(meta_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["key", "value"]:
            raise ConfigError(f"{meta_path}: unexpected header {header!r}")
        for key, value in reader:
            meta[key] = value
    if meta.get("schema") != SCHEMA:
        raise ConfigError(f"{meta_path}: not a {SCHEMA} table set")

    def opt_float(key: str) -> Optional[float]:
        text = meta.get(key, "")
        return float(text) if text else None

    weights = {
        key.split(":", 1)[1]: float(value)
        for key, value in meta.items()
        if key.startswith("weight:")
    }

    order: List[tuple] = []
    grouped: Dict[tuple, dict] = {}
    for row in _read_rows(out_dir / "r_table.csv"):
        key = (row["truck"], row["terrain"], row["attack"], int(row["cargo_kg"]))
        if key not in grouped:
            order.append(key)
            grouped[key] = {"signals": {}, "n_runs": None, "weighted_R": None}
        bucket = grouped[key]
        if row["signal"] == _ALL_SIGNALS:
            if row["statistic"] == "n_runs":
                bucket["n_runs"] = int(row["value"])
            elif row["statistic"] == "weighted_R":
                bucket["weighted_R"] = float(row["value"])
        else:
            stats = bucket["signals"].setdefault(row["signal"], {})
            stats[row["statistic"]] = float(row["value"])

    fits: Dict[tuple, Dict[str, dict]] = {}
    fit_path = out_dir / "fit_table.csv"
    if fit_path.exists():
        for row in _read_rows(fit_path):
            key = (row["truck"], row["terrain"], row["attack"], int(row["cargo_kg"]))
            per_signal = fits.setdefault(key, {})
            per_signal.setdefault(row["signal"], {})[row["statistic"]] = row["value"]

    entries = []
    for key in order:
        bucket = grouped[key]
        signals = {
            name: SignalMeasure(stats["R"], stats["ci_low"], stats["ci_high"])
            for name, stats in bucket["signals"].items()
        }
        entry_fits = {}
        for name, cells in fits.get(key, {}).items():
            n_phases = int(cells.get("n_phases", "0"))
            phases = []
            for i in range(1, n_phases + 1):
                eq_text = cells.get(f"phase{i}_equilibrium", "")
                phases.append(
                    FitPhase(
                        float(cells[f"phase{i}_t_from"]),
                        float(cells[f"phase{i}_t_to"]),
                        float(cells[f"phase{i}_M"]),
                        float(cells[f"phase{i}_B"]),
                        float(eq_text) if eq_text else None,
                    )
                )

            def opt_scalar(stat: str) -> Optional[float]:
                return float(cells[stat]) if stat in cells else None

            entry_fits[name] = FitSummary(
                degenerate=cells.get("degenerate", "0") == "1",
                reason=cells.get("reason", ""),
                refined=cells.get("refined", "0") == "1",
                curve_file=cells.get("curve_file", ""),
                t_star=opt_scalar("t_star"),
                m=opt_scalar("m"),
                t1=opt_scalar("t1"),
                t2=opt_scalar("t2"),
                rmse=opt_scalar("rmse"),
                phases=tuple(phases),
            )
        entries.append(
            ReportEntry(
                truck=key[0],
                terrain=key[1],
                attack=key[2],
                cargo_kg=key[3],
                n_runs=bucket["n_runs"],
                signals=signals,
                weighted_R=bucket["weighted_R"],
                fits=entry_fits,
            )
        )
    return ResilienceReport(
        median_window_s=float(meta["median_window_s"]),
        entries=entries,
        window_start_s=opt_float("window_start_s"),
        window_end_s=opt_float("window_end_s"),
        weights=weights or None,
    )


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def _condition_ticks(ax, labels: List[str]):
    n = len(labels)
    step = max(1, (n + 29) // 30)
    shown = range(0, n, step)
    ax.set_xticks(list(shown))
    ax.set_xticklabels([labels[i] for i in shown], rotation=90, fontsize=7)


def render_figures(report: ResilienceReport, out_dir, curve_root=None) -> List[Path]:
    """Render summary figures next to the tables; returns written paths.

    curve_root resolves the per-fit sampled-curve files recorded in the
    report (they live next to the report JSON, not next to the tables).
    """
    if not report.entries:
        return []
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_root = Path(curve_root) if curve_root is not None else out_dir
    written = []
    entries = report.entries
    labels = [e.label for e in entries]
    signal_names = sorted({name for e in entries for name in e.signals})

    fig, ax = plt.subplots(figsize=(max(6.0, 0.22 * len(entries) + 2.0), 4.2))
    for i, name in enumerate(signal_names):
        offset = (i - (len(signal_names) - 1) / 2.0) * 0.18
        xs, ys, lo, hi = [], [], [], []
        for k, entry in enumerate(entries):
            measure = entry.signals.get(name)
            if measure is None:
                continue
            xs.append(k + offset)
            ys.append(measure.R)
            lo.append(max(measure.R - measure.ci_low, 0.0))
            hi.append(max(measure.ci_high - measure.R, 0.0))
        ax.errorbar(xs, ys, yerr=[lo, hi], fmt="o", markersize=3.5, capsize=2.5, label=name)
    ax.axhline(1.0, color="0.75", linewidth=0.8, zorder=0)
    _condition_ticks(ax, labels)
    ax.set_ylabel("resilience R")
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", linewidth=0.3, alpha=0.6)
    fig.tight_layout()
    r_fig = out_dir / "resilience_r.png"
    fig.savefig(r_fig, dpi=120)
    plt.close(fig)
    written.append(r_fig)

    fitted = [
        (k, name, fit)
        for k, entry in enumerate(entries)
        for name, fit in sorted(entry.fits.items())
        if not fit.degenerate and fit.phases
    ]
    if fitted:
        fig, ax = plt.subplots(figsize=(max(6.0, 0.22 * len(entries) + 2.0), 4.2))
        for i, name in enumerate(signal_names):
            xs = []
            ys = []
            offset = (i - (len(signal_names) - 1) / 2.0) * 0.18
            for k, fit_name, fit in fitted:
                if fit_name != name or fit.phases[0].equilibrium is None:
                    continue
                xs.append(k + offset)
                ys.append(fit.phases[0].equilibrium)
            if xs:
                ax.plot(xs, ys, "s", markersize=3.5, label=name)
        _condition_ticks(ax, labels)
        ax.set_ylabel("attack-phase equilibrium B/(M+B)")
        ax.set_ylim(0.0, 1.05)
        ax.legend(fontsize=8)
        ax.grid(True, axis="y", linewidth=0.3, alpha=0.6)
        fig.tight_layout()
        eq_fig = out_dir / "fit_equilibria.png"
        fig.savefig(eq_fig, dpi=120)
        plt.close(fig)
        written.append(eq_fig)

    panels = []
    for k, name, fit in fitted:
        if not fit.curve_file:
            continue
        path = curve_root / fit.curve_file
        if path.exists():
            panels.append((entries[k], name, path))
        if len(panels) == 6:
            break
    if panels:
        cols = min(3, len(panels))
        nrows = (len(panels) + cols - 1) // cols
        fig, axes = plt.subplots(
            nrows, cols, figsize=(3.4 * cols, 2.6 * nrows), squeeze=False
        )
        for ax in axes.flat[len(panels):]:
            ax.set_visible(False)
        for ax, (entry, name, path) in zip(axes.flat, panels):
            table = _read_curve_csv(path)
            ax.plot(table["time_s"], table["observed"], linewidth=0.8, label="observed")
            ax.plot(table["time_s"], table["model"], "--", linewidth=1.1, label="model")
            ax.set_title(f"{entry.label} {name}", fontsize=7)
            ax.tick_params(labelsize=7)
        axes.flat[0].legend(fontsize=7)
        fig.tight_layout()
        curves_fig = out_dir / "fit_curves.png"
        fig.savefig(curves_fig, dpi=120)
        plt.close(fig)
        written.append(curves_fig)
    return written


def _read_curve_csv(path: Path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        columns = {name: [] for name in ("time_s", "observed", "model")}
        for row in reader:
            for name in columns:
                columns[name].append(float(row[name]))
    return columns
