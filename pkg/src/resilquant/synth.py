"""Synthetic experimental runs over a truck/terrain/attack/cargo design grid.

Baselines are invented but deterministic stand-ins for testbed physics: a
per-truck base level shaped by terrain, scaled down with cargo weight, with
a 72 s square-wave fan component on the fuel-efficiency signal.  Attacks
multiply a baseline by a model-generated functionality curve, and driver
attention drift makes replicate seeds unique.
"""

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from scipy.signal import lfilter

from .errors import AlignmentError, ConfigError, DomainError, RangeError
from .model import (
    ImpactKind,
    ImpactProfile,
    ModelState,
    eval_piecewise_constant,
    eval_piecewise_linear,
)
from .numerics import TimeSeries

__all__ = [
    "Attack",
    "AttackPreset",
    "CARGO_CHOICES",
    "Condition",
    "DEFAULT_PRESETS",
    "FAN_PERIOD_S",
    "GridDesign",
    "RunRecord",
    "SEED_RANGE",
    "SIGNALS",
    "Terrain",
    "Truck",
    "apply_attack",
    "attack_ratio",
    "baseline_profile",
    "design_from_config",
    "driver_drift",
    "generate_grid",
    "load_design",
    "preset_profile",
    "read_run_csv",
    "synthesize_run",
    "write_run_csv",
]


class Truck(str, Enum):
    LIGHT = "Light"
    MEDIUM = "Medium"
    HEAVY = "Heavy"


class Terrain(str, Enum):
    STEADY_DESCENT = "SteadyDescent"
    FLAT_ROAD = "FlatRoad"
    FLAT_OFF_ROAD = "FlatOffRoad"
    HILLY = "Hilly"
    STEADY_ASCENT = "SteadyAscent"


class Attack(str, Enum):
    BASELINE = "Baseline"
    FAN = "Fan"
    ECU = "ECU"
    SUSPENSION = "Suspension"


CARGO_CHOICES = (0, 3000, 6000, 9000)
SEED_RANGE = (1, 30)
SIGNALS = ("fuel_efficiency", "speed")

FAN_PERIOD_S = 72.0
_FAN_AMPLITUDE = 0.01
# Fraction of each period the fan is engaged.  Kept below one half so a
# median window spanning a whole period always holds a majority of
# fan-off samples and removes the wave instead of flickering between its
# two levels.
_FAN_DUTY = 1.0 / 3.0
_HILL_PERIOD_S = 180.0

_FUEL_BASE = {Truck.LIGHT: 6.0, Truck.MEDIUM: 5.2, Truck.HEAVY: 4.4}
_SPEED_BASE = {Truck.LIGHT: 76.0, Truck.MEDIUM: 68.0, Truck.HEAVY: 61.0}

# Fractional fuel-efficiency cost of a full 9000 kg load; speed is hit less.
_FUEL_CARGO_COST = 0.18
_SPEED_CARGO_COST = 0.06

_TIME_EPS = 1e-9


def _coerce_enum(cls, value, label: str):
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(member.value for member in cls)
        raise DomainError(f"unknown {label} {value!r}; choose one of {choices}")


@dataclass(frozen=True)
class Condition:
    """One cell of the experimental design plus its replicate seed."""

    truck: Truck
    terrain: Terrain
    attack: Attack
    cargo_kg: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "truck", _coerce_enum(Truck, self.truck, "truck"))
        object.__setattr__(
            self, "terrain", _coerce_enum(Terrain, self.terrain, "terrain")
        )
        object.__setattr__(self, "attack", _coerce_enum(Attack, self.attack, "attack"))
        if self.cargo_kg not in CARGO_CHOICES:
            raise DomainError(
                f"cargo_kg must be one of {CARGO_CHOICES}, got {self.cargo_kg!r}"
            )
        object.__setattr__(self, "cargo_kg", int(self.cargo_kg))
        lo, hi = SEED_RANGE
        if int(self.seed) != self.seed or not lo <= self.seed <= hi:
            raise DomainError(f"seed must be an integer in {lo}..{hi}, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class RunRecord:
    """Signals of one synthetic run with its attack timing."""

    condition: Condition
    signals: Mapping[str, TimeSeries]
    attack_start: float
    duration: float

    def __post_init__(self):
        signals = dict(self.signals)
        if not signals:
            raise DomainError("a run carries at least one signal")
        object.__setattr__(self, "signals", signals)
        first_name = next(iter(signals))
        first = signals[first_name]
        for name, series in signals.items():
            same = (
                series.n == first.n
                and abs(series.t0 - first.t0) <= _TIME_EPS
                and abs(series.dt - first.dt) <= _TIME_EPS
            )
            if not same:
                raise AlignmentError(
                    f"signal {name!r} grid differs from {first_name!r}"
                )
        if not (math.isfinite(self.duration) and self.duration > 0):
            raise DomainError(f"duration must be positive, got {self.duration!r}")
        if not 0.0 <= self.attack_start < self.duration:
            raise DomainError(
                f"attack_start {self.attack_start!r} outside [0, {self.duration!r})"
            )


@dataclass(frozen=True)
class AttackPreset:
    """Declarative attack shape: active-phase impacts plus a recovery rate.

    cargo_malware_gain maps terrain names to a fractional malware boost at
    full load, so terrain-sensitive attacks (a stiffer climb under the same
    degradation) are expressible per preset.
    """

    start_s: float
    duration_s: float
    malware: float
    bonware: float
    recovery_bonware: float
    cargo_malware_gain: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        if isinstance(self.cargo_malware_gain, Mapping):
            pairs = tuple(self.cargo_malware_gain.items())
        else:
            pairs = tuple(tuple(p) for p in self.cargo_malware_gain)
        gains = tuple(
            (_coerce_enum(Terrain, name, "terrain").value, float(g))
            for name, g in pairs
        )
        object.__setattr__(self, "cargo_malware_gain", gains)
        for name, value in (
            ("start_s", self.start_s),
            ("duration_s", self.duration_s),
            ("malware", self.malware),
            ("bonware", self.bonware),
            ("recovery_bonware", self.recovery_bonware),
        ):
            if not (math.isfinite(value) and value >= 0):
                raise DomainError(f"{name} must be finite and >= 0, got {value!r}")
        if self.duration_s <= 0:
            raise DomainError("duration_s must be positive")
        for name, g in gains:
            if not (math.isfinite(g) and g >= 0):
                raise DomainError(f"cargo gain for {name} must be finite and >= 0")

    def gain_for(self, terrain: Terrain) -> float:
        for name, g in self.cargo_malware_gain:
            if name == Terrain(terrain).value:
                return g
        return 0.0


DEFAULT_PRESETS: Dict[Attack, AttackPreset] = {
    # Rapid decline to the 0.92 equilibrium while active, gentler climb out.
    Attack.ECU: AttackPreset(
        start_s=300.0,
        duration_s=300.0,
        malware=0.0064,
        bonware=0.0736,
        recovery_bonware=0.05,
    ),
    # Shallow dip (equilibrium 0.96) and a fast recovery.
    Attack.FAN: AttackPreset(
        start_s=450.0,
        duration_s=200.0,
        malware=0.0048,
        bonware=0.1152,
        recovery_bonware=0.12,
    ),
    # Sustained degradation toward 0.45 with weak defenses; load makes the
    # malware bite harder on climbing terrain.
    Attack.SUSPENSION: AttackPreset(
        start_s=450.0,
        duration_s=250.0,
        malware=0.01925,
        bonware=0.01575,
        recovery_bonware=0.03,
        cargo_malware_gain={"Hilly": 0.8, "SteadyAscent": 0.5},
    ),
}


@dataclass(frozen=True)
class GridDesign:
    """Everything needed to regenerate a dataset bit for bit."""

    trucks: Tuple[Truck, ...] = tuple(Truck)
    terrains: Tuple[Terrain, ...] = tuple(Terrain)
    attacks: Tuple[Attack, ...] = tuple(Attack)
    cargos_kg: Tuple[int, ...] = CARGO_CHOICES
    seeds: Tuple[int, ...] = tuple(range(1, 31))
    dt: float = 0.02
    duration: float = 900.0
    drift_sigma: float = 0.02
    drift_correlation_s: float = 30.0
    base_seed: int = 20260816
    presets: Mapping[Attack, AttackPreset] = field(
        default_factory=lambda: dict(DEFAULT_PRESETS)
    )

    def __post_init__(self):
        object.__setattr__(
            self, "trucks", tuple(_coerce_enum(Truck, t, "truck") for t in self.trucks)
        )
        object.__setattr__(
            self,
            "terrains",
            tuple(_coerce_enum(Terrain, t, "terrain") for t in self.terrains),
        )
        object.__setattr__(
            self,
            "attacks",
            tuple(_coerce_enum(Attack, a, "attack") for a in self.attacks),
        )
        object.__setattr__(self, "cargos_kg", tuple(int(c) for c in self.cargos_kg))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        for label, axis in (
            ("trucks", self.trucks),
            ("terrains", self.terrains),
            ("attacks", self.attacks),
            ("cargos_kg", self.cargos_kg),
            ("seeds", self.seeds),
        ):
            if not axis:
                raise ConfigError(f"empty design: no {label} selected")
            if len(set(axis)) != len(axis):
                raise ConfigError(f"design axis {label} repeats a value")
        for c in self.cargos_kg:
            if c not in CARGO_CHOICES:
                raise ConfigError(f"cargo_kg {c!r} not in {CARGO_CHOICES}")
        lo, hi = SEED_RANGE
        for s in self.seeds:
            if not lo <= s <= hi:
                raise ConfigError(f"seed {s!r} outside {lo}..{hi}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if not (math.isfinite(self.duration) and self.duration >= 2 * self.dt):
            raise ConfigError("duration must cover at least two samples")
        if not (math.isfinite(self.drift_sigma) and self.drift_sigma >= 0):
            raise ConfigError("drift sigma must be finite and >= 0")
        if not (
            math.isfinite(self.drift_correlation_s) and self.drift_correlation_s > 0
        ):
            raise ConfigError("drift correlation time must be positive")
        if int(self.base_seed) != self.base_seed or self.base_seed < 0:
            raise ConfigError("base_seed must be a non-negative integer")
        presets = {Attack(k): v for k, v in dict(self.presets).items()}
        object.__setattr__(self, "presets", presets)
        for attack in self.attacks:
            if attack is Attack.BASELINE:
                continue
            if attack not in presets:
                raise ConfigError(f"no preset declared for attack {attack.value}")

    @property
    def n_runs(self) -> int:
        return (
            len(self.trucks)
            * len(self.terrains)
            * len(self.attacks)
            * len(self.cargos_kg)
            * len(self.seeds)
        )

    @property
    def n_samples(self) -> int:
        return int(round(self.duration / self.dt)) + 1

    @property
    def t_end(self) -> float:
        return (self.n_samples - 1) * self.dt


# ---------------------------------------------------------------------------
# Baseline shapes
# ---------------------------------------------------------------------------


def _terrain_factor(signal: str, terrain: Terrain, times: np.ndarray, duration: float):
    x = times / duration
    hill = np.sin(2.0 * math.pi * times / _HILL_PERIOD_S)
    if signal == "fuel_efficiency":
        shapes = {
            Terrain.STEADY_DESCENT: 1.12 + 0.04 * x,
            Terrain.FLAT_ROAD: np.ones_like(times),
            Terrain.FLAT_OFF_ROAD: np.full_like(times, 0.88),
            Terrain.HILLY: 1.0 - 0.07 * hill,
            Terrain.STEADY_ASCENT: 0.82 - 0.05 * x,
        }
    else:
        shapes = {
            Terrain.STEADY_DESCENT: 1.06 + 0.02 * x,
            Terrain.FLAT_ROAD: np.ones_like(times),
            Terrain.FLAT_OFF_ROAD: np.full_like(times, 0.93),
            Terrain.HILLY: 1.0 - 0.04 * hill,
            Terrain.STEADY_ASCENT: 0.90 - 0.03 * x,
        }
    return shapes[terrain]


def _cargo_factor(signal: str, cargo_kg: int) -> float:
    cost = _FUEL_CARGO_COST if signal == "fuel_efficiency" else _SPEED_CARGO_COST
    return 1.0 / (1.0 + cost * cargo_kg / CARGO_CHOICES[-1])


def _fan_wave(times: np.ndarray) -> np.ndarray:
    engaged = np.mod(times, FAN_PERIOD_S) < _FAN_DUTY * FAN_PERIOD_S
    return 1.0 - _FAN_AMPLITUDE * engaged.astype(float)


def baseline_profile(
    condition: Condition,
    signal: str = "fuel_efficiency",
    dt: float = 0.02,
    duration: float = 900.0,
) -> TimeSeries:
    """Deterministic attack-free signal for a condition.

    The level depends on (truck, terrain, cargo) only; the attack and seed
    fields of the condition are ignored.  Fuel efficiency carries the 72 s
    fan square wave; speed does not.
    """
    if signal not in SIGNALS:
        raise DomainError(f"unknown signal {signal!r}; choose one of {SIGNALS}")
    if not (math.isfinite(dt) and dt > 0):
        raise DomainError(f"dt must be positive, got {dt!r}")
    n = int(round(duration / dt)) + 1
    if not (math.isfinite(duration) and n >= 2):
        raise DomainError("duration must cover at least two samples")
    times = np.arange(n) * dt
    base = _FUEL_BASE if signal == "fuel_efficiency" else _SPEED_BASE
    values = base[Truck(condition.truck)] * _terrain_factor(
        signal, Terrain(condition.terrain), times, duration
    )
    values = values * _cargo_factor(signal, condition.cargo_kg)
    if signal == "fuel_efficiency":
        values = values * _fan_wave(times)
    return TimeSeries(0.0, dt, values)


# ---------------------------------------------------------------------------
# Attacks and drift
# ---------------------------------------------------------------------------


def preset_profile(
    preset: AttackPreset, terrain: Terrain, cargo_kg: int, t_end: float
) -> Tuple[ImpactProfile, float]:
    """Impact profile spanning [start, t_end] for one run, and the start."""
    start = preset.start_s
    if not start < t_end:
        raise RangeError(
            f"attack start {start!r} must precede the run end {t_end!r}"
        )
    gain = preset.gain_for(terrain)
    m_eff = preset.malware * (1.0 + gain * cargo_kg / CARGO_CHOICES[-1])
    stop = start + preset.duration_s
    if stop >= t_end - _TIME_EPS:
        profile = ImpactProfile.piecewise_constant(
            [start, t_end], [(m_eff, preset.bonware)]
        )
    else:
        profile = ImpactProfile.piecewise_constant(
            [start, stop, t_end],
            [(m_eff, preset.bonware), (0.0, preset.recovery_bonware)],
        )
    return profile, start


def _eval_profile(state: ModelState, profile: ImpactProfile, times) -> np.ndarray:
    kind = profile.kind
    if kind in (ImpactKind.CONSTANT, ImpactKind.PIECEWISE_CONSTANT):
        if kind is ImpactKind.CONSTANT:
            profile = ImpactProfile(
                ImpactKind.PIECEWISE_CONSTANT, profile.knots, profile.intervals
            )
        return np.asarray(eval_piecewise_constant(state, profile, times), dtype=float)
    if kind is ImpactKind.LINEAR:
        profile = ImpactProfile(
            ImpactKind.PIECEWISE_LINEAR, profile.knots, profile.intervals
        )
    return np.asarray(eval_piecewise_linear(state, profile, times), dtype=float)


def attack_ratio(
    profile: ImpactProfile, attack_start: float, times: np.ndarray
) -> np.ndarray:
    """Model functionality curve on a grid, 1 before the attack starts."""
    ratio = np.ones(len(times))
    mask = np.asarray(times) >= attack_start - _TIME_EPS
    if np.any(mask):
        state = ModelState(F_N=1.0, F0=1.0, t0=attack_start)
        ratio[mask] = _eval_profile(state, profile, np.asarray(times)[mask])
    return ratio


def apply_attack(
    baseline: TimeSeries,
    attack: Attack,
    attack_start: float,
    profile: ImpactProfile,
) -> TimeSeries:
    """Baseline scaled pointwise by the model curve of an attack profile."""
    kind = _coerce_enum(Attack, attack, "attack")
    if kind is Attack.BASELINE:
        raise DomainError("Baseline is the absence of an attack; nothing to apply")
    if not baseline.t0 <= attack_start < baseline.t_end:
        raise RangeError(
            f"attack_start {attack_start!r} outside run span "
            f"[{baseline.t0!r}, {baseline.t_end!r})"
        )
    scale = max(1.0, abs(baseline.t_end))
    if (
        abs(profile.knots[0] - attack_start) > _TIME_EPS * scale
        or abs(profile.knots[-1] - baseline.t_end) > _TIME_EPS * scale
    ):
        raise RangeError(
            f"profile spans [{profile.knots[0]!r}, {profile.knots[-1]!r}] but the "
            f"attack window is [{attack_start!r}, {baseline.t_end!r}]"
        )
    ratio = attack_ratio(profile, attack_start, baseline.times())
    return TimeSeries(baseline.t0, baseline.dt, baseline.values * ratio)


def driver_drift(
    series: TimeSeries,
    seed,
    sigma: float = 0.02,
    correlation_time: float = 30.0,
) -> TimeSeries:
    """Multiplicative attention drift: exp of a stationary AR(1) walk.

    The log-drift has stationary standard deviation sigma and the given
    correlation time; a fresh generator is seeded per call, so the same
    seed always reproduces the same realization.
    """
    if not (math.isfinite(sigma) and sigma >= 0):
        raise DomainError(f"sigma must be finite and >= 0, got {sigma!r}")
    if not (math.isfinite(correlation_time) and correlation_time > 0):
        raise DomainError(
            f"correlation_time must be positive, got {correlation_time!r}"
        )
    if sigma == 0.0:
        return TimeSeries(series.t0, series.dt, series.values.copy())
    rho = math.exp(-series.dt / correlation_time)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(series.n)
    eps = sigma * math.sqrt(1.0 - rho * rho) * z
    eps[0] = sigma * z[0]
    g = lfilter([1.0], [1.0, -rho], eps)
    return TimeSeries(series.t0, series.dt, series.values * np.exp(g))


# ---------------------------------------------------------------------------
# Grid generation
# ---------------------------------------------------------------------------

_TRUCK_INDEX = {t: i for i, t in enumerate(Truck)}
_TERRAIN_INDEX = {t: i for i, t in enumerate(Terrain)}
_ATTACK_INDEX = {a: i for i, a in enumerate(Attack)}


def _drift_seed(design: GridDesign, condition: Condition, signal: str):
    """Seed material keyed by canonical indices, not design-local positions,
    so a sub-grid reproduces exactly the runs of the full grid."""
    return np.random.SeedSequence(
        (
            design.base_seed,
            _TRUCK_INDEX[condition.truck],
            _TERRAIN_INDEX[condition.terrain],
            _ATTACK_INDEX[condition.attack],
            CARGO_CHOICES.index(condition.cargo_kg),
            condition.seed,
            SIGNALS.index(signal),
        )
    )


def synthesize_run(condition: Condition, design: GridDesign) -> RunRecord:
    """Build one run: baseline, preset attack scaling, then drift."""
    t_end = design.t_end
    if condition.attack is Attack.BASELINE:
        ratio = None
        attack_start = 0.0
    else:
        profile, attack_start = preset_profile(
            design.presets[condition.attack],
            condition.terrain,
            condition.cargo_kg,
            t_end,
        )
        times = np.arange(design.n_samples) * design.dt
        ratio = attack_ratio(profile, attack_start, times)
    signals = {}
    for signal in SIGNALS:
        base = baseline_profile(
            condition, signal=signal, dt=design.dt, duration=design.duration
        )
        values = base.values if ratio is None else base.values * ratio
        signals[signal] = driver_drift(
            TimeSeries(0.0, design.dt, values),
            _drift_seed(design, condition, signal),
            design.drift_sigma,
            design.drift_correlation_s,
        )
    return RunRecord(
        condition=condition,
        signals=signals,
        attack_start=attack_start,
        duration=t_end,
    )


def _run_filename(condition: Condition) -> str:
    return (
        f"{condition.truck.value}_{condition.terrain.value}_"
        f"{condition.attack.value}_{condition.cargo_kg}kg_s{condition.seed:02d}.csv"
    )


def write_run_csv(path, record: RunRecord) -> None:
    first = next(iter(record.signals.values()))
    frame = {"time_s": first.times()}
    for signal in SIGNALS:
        if signal in record.signals:
            frame[signal] = record.signals[signal].values
    pd.DataFrame(frame).to_csv(path, index=False, lineterminator="\n")


def read_run_csv(path) -> Dict[str, np.ndarray]:
    """Columns of one run file; raises on a missing or malformed file."""
    # The default fast parser is off by an ulp on some decimals; round_trip
    # restores exactly the doubles the writer serialized.
    table = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ("time_s",) + SIGNALS if c not in table.columns]
    if missing:
        raise ConfigError(f"{path}: missing columns {missing}")
    return {c: table[c].to_numpy(dtype=float) for c in table.columns}


def _emit_cell(args) -> List[dict]:
    """Write every seed of one (truck, terrain, attack, cargo) cell.

    Baseline levels and the attack ratio are shared across seeds, so they
    are computed once here rather than once per run.
    """
    design, truck, terrain, attack, cargo_kg, out_dir = args
    out = Path(out_dir)
    t_end = design.t_end
    times = np.arange(design.n_samples) * design.dt
    probe = Condition(truck, terrain, attack, cargo_kg, seed=design.seeds[0])
    bases = {
        s: baseline_profile(probe, signal=s, dt=design.dt, duration=design.duration)
        for s in SIGNALS
    }
    if attack is Attack.BASELINE:
        ratio = None
        attack_start = 0.0
    else:
        profile, attack_start = preset_profile(
            design.presets[attack], terrain, cargo_kg, t_end
        )
        ratio = attack_ratio(profile, attack_start, times)
    rows = []
    for seed in design.seeds:
        condition = Condition(truck, terrain, attack, cargo_kg, seed)
        frame = {"time_s": times}
        for signal in SIGNALS:
            values = bases[signal].values
            if ratio is not None:
                values = values * ratio
            drifted = driver_drift(
                TimeSeries(0.0, design.dt, values),
                _drift_seed(design, condition, signal),
                design.drift_sigma,
                design.drift_correlation_s,
            )
            frame[signal] = drifted.values
        name = _run_filename(condition)
        pd.DataFrame(frame).to_csv(out / name, index=False, lineterminator="\n")
        rows.append(
            {
                "file": name,
                "truck": truck.value,
                "terrain": terrain.value,
                "attack": attack.value,
                "cargo_kg": int(cargo_kg),
                "seed": int(seed),
                "attack_start_s": float(attack_start),
                "duration_s": float(t_end),
            }
        )
    return rows


def generate_grid(design: GridDesign, output_dir, jobs: int = 1) -> List[dict]:
    """Emit one CSV per design cell and seed plus a manifest.json.

    Rows keep the nested axis order (truck, terrain, attack, cargo, seed)
    regardless of worker scheduling, so reruns are byte-identical.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [
        (design, truck, terrain, attack, cargo, str(out))
        for truck in design.trucks
        for terrain in design.terrains
        for attack in design.attacks
        for cargo in design.cargos_kg
    ]
    manifest: List[dict] = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for rows in pool.map(_emit_cell, cells, chunksize=4):
                manifest.extend(rows)
    else:
        for cell in cells:
            manifest.extend(_emit_cell(cell))
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _require_mapping(doc, label: str) -> Mapping:
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{label} must be a mapping, got {type(doc).__name__}")
    return doc


def _check_keys(doc: Mapping, allowed: Sequence[str], label: str):
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown {label} key {key!r}")


def design_from_config(doc: Optional[Mapping]) -> GridDesign:
    """GridDesign from a parsed config document; missing parts take the
    full-grid defaults."""
    if doc is None:
        return GridDesign()
    doc = _require_mapping(doc, "config")
    _check_keys(doc, ("grid", "run", "drift", "attacks", "base_seed"), "config")

    kwargs: Dict[str, object] = {}
    grid = _require_mapping(doc.get("grid", {}), "grid")
    _check_keys(grid, ("trucks", "terrains", "attacks", "cargos_kg", "seeds"), "grid")
    if "trucks" in grid:
        kwargs["trucks"] = tuple(grid["trucks"])
    if "terrains" in grid:
        kwargs["terrains"] = tuple(grid["terrains"])
    if "attacks" in grid:
        kwargs["attacks"] = tuple(grid["attacks"])
    if "cargos_kg" in grid:
        kwargs["cargos_kg"] = tuple(grid["cargos_kg"])
    if "seeds" in grid:
        seeds = grid["seeds"]
        if isinstance(seeds, int):
            kwargs["seeds"] = tuple(range(1, seeds + 1))
        else:
            kwargs["seeds"] = tuple(seeds)

    run = _require_mapping(doc.get("run", {}), "run")
    _check_keys(run, ("dt_s", "duration_s"), "run")
    if "dt_s" in run:
        kwargs["dt"] = float(run["dt_s"])
    if "duration_s" in run:
        kwargs["duration"] = float(run["duration_s"])

    drift = _require_mapping(doc.get("drift", {}), "drift")
    _check_keys(drift, ("sigma", "correlation_time_s"), "drift")
    if "sigma" in drift:
        kwargs["drift_sigma"] = float(drift["sigma"])
    if "correlation_time_s" in drift:
        kwargs["drift_correlation_s"] = float(drift["correlation_time_s"])

    if "base_seed" in doc:
        kwargs["base_seed"] = doc["base_seed"]

    presets = dict(DEFAULT_PRESETS)
    overrides = _require_mapping(doc.get("attacks", {}), "attacks")
    fields = (
        "start_s",
        "duration_s",
        "malware",
        "bonware",
        "recovery_bonware",
        "cargo_malware_gain",
    )
    for name, body in overrides.items():
        attack = _coerce_enum(Attack, name, "attack")
        if attack is Attack.BASELINE:
            raise ConfigError("Baseline takes no attack preset")
        body = _require_mapping(body, f"attacks.{name}")
        _check_keys(body, fields, f"attacks.{name}")
        current = presets.get(attack)
        merged = {f: getattr(current, f) for f in fields} if current else {}
        merged.update(body)
        try:
            presets[attack] = AttackPreset(**merged)
        except TypeError as exc:
            raise ConfigError(f"attacks.{name}: {exc}")
    kwargs["presets"] = presets

    try:
        return GridDesign(**kwargs)
    except (DomainError, TypeError) as exc:
        raise ConfigError(str(exc))


def load_design(path) -> GridDesign:
    """Parse a YAML config file into a GridDesign."""
    with open(path) as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"{path}: config parse error{where}: {exc}")
    return design_from_config(doc)
