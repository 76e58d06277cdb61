"""Tests for synthetic run generation: baseline shapes, attack scaling,
driver drift, grid emission, and config parsing."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from resilquant.errors import (
    AlignmentError,
    ConfigError,
    DomainError,
    RangeError,
)
from resilquant.metrics import ratio_curve
from resilquant.numerics import TimeSeries, running_median
from resilquant.synth import (
    Attack,
    AttackPreset,
    CARGO_CHOICES,
    Condition,
    DEFAULT_PRESETS,
    GridDesign,
    RunRecord,
    SIGNALS,
    Terrain,
    Truck,
    apply_attack,
    attack_ratio,
    baseline_profile,
    design_from_config,
    driver_drift,
    generate_grid,
    load_design,
    preset_profile,
    read_run_csv,
    synthesize_run,
)


def cond(**overrides) -> Condition:
    fields = dict(truck="Light", terrain="FlatRoad", attack="Baseline", cargo_kg=0, seed=1)
    fields.update(overrides)
    return Condition(**fields)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def test_condition_coerces_strings():
    c = cond(truck="Heavy", terrain="SteadyAscent", attack="ECU", cargo_kg=6000, seed=30)
    assert c.truck is Truck.HEAVY
    assert c.terrain is Terrain.STEADY_ASCENT
    assert c.attack is Attack.ECU
    assert c.cargo_kg == 6000 and c.seed == 30


@pytest.mark.parametrize(
    "overrides",
    [
        {"truck": "Lite"},
        {"terrain": "Mountain"},
        {"attack": "DoS"},
        {"cargo_kg": 4500},
        {"seed": 0},
        {"seed": 31},
        {"seed": 1.5},
    ],
)
def test_condition_validation(overrides):
    with pytest.raises(DomainError):
        cond(**overrides)


def test_run_record_validation():
    a = TimeSeries(0.0, 1.0, np.ones(10))
    b = TimeSeries(0.0, 1.0, np.ones(10))
    rec = RunRecord(cond(), {"fuel_efficiency": a, "speed": b}, 2.0, 9.0)
    assert rec.duration == 9.0
    with pytest.raises(AlignmentError):
        RunRecord(cond(), {"fuel_efficiency": a, "speed": TimeSeries(0.0, 0.5, np.ones(10))}, 2.0, 9.0)
    with pytest.raises(AlignmentError):
        RunRecord(cond(), {"fuel_efficiency": a, "speed": TimeSeries(0.0, 1.0, np.ones(9))}, 2.0, 9.0)
    with pytest.raises(DomainError):
        RunRecord(cond(), {}, 2.0, 9.0)
    with pytest.raises(DomainError):
        RunRecord(cond(), {"fuel_efficiency": a}, 9.0, 9.0)
    with pytest.raises(DomainError):
        RunRecord(cond(), {"fuel_efficiency": a}, -1.0, 9.0)


def test_attack_preset_validation():
    preset = AttackPreset(10.0, 5.0, 0.01, 0.02, 0.03, {"Hilly": 0.5})
    assert preset.gain_for(Terrain.HILLY) == 0.5
    assert preset.gain_for(Terrain.FLAT_ROAD) == 0.0
    with pytest.raises(DomainError):
        AttackPreset(10.0, 5.0, -0.01, 0.02, 0.03)
    with pytest.raises(DomainError):
        AttackPreset(10.0, 0.0, 0.01, 0.02, 0.03)
    with pytest.raises(DomainError):
        AttackPreset(10.0, 5.0, 0.01, 0.02, 0.03, {"Moon": 1.0})


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def test_baseline_deterministic_and_ignores_attack_and_seed():
    a = baseline_profile(cond(attack="ECU", seed=7), dt=1.0, duration=200.0)
    b = baseline_profile(cond(attack="Baseline", seed=23), dt=1.0, duration=200.0)
    assert np.array_equal(a.values, b.values)
    assert a.t0 == 0.0 and a.dt == 1.0 and a.n == 201


def test_baseline_strictly_positive_everywhere():
    for truck in Truck:
        for terrain in Terrain:
            for signal in SIGNALS:
                series = baseline_profile(
                    cond(truck=truck, terrain=terrain, cargo_kg=9000),
                    signal=signal,
                    dt=5.0,
                    duration=900.0,
                )
                assert np.all(series.values > 0.0)


def test_baseline_cargo_ordering_pointwise():
    for terrain in (Terrain.FLAT_ROAD, Terrain.HILLY, Terrain.STEADY_ASCENT):
        prev = None
        for kg in CARGO_CHOICES:
            series = baseline_profile(
                cond(terrain=terrain, cargo_kg=kg), dt=2.0, duration=300.0
            )
            if prev is not None:
                assert np.all(series.values < prev)
            prev = series.values


def test_baseline_fan_square_wave():
    series = baseline_profile(cond(), dt=0.5, duration=300.0)
    values = series.values
    # Two levels exactly, alternating every 36 s, with a 72 s period.
    levels = np.unique(values)
    assert levels.size == 2
    assert np.array_equal(values[:288], values[144:432])
    assert values[0] != values[72]
    assert levels[0] == pytest.approx(levels[1] * 0.99)
    # Speed carries no fan component: flat road speed is constant.
    speed = baseline_profile(cond(), signal="speed", dt=0.5, duration=300.0)
    assert np.unique(speed.values).size == 1


def test_baseline_terrain_shapes():
    hilly = baseline_profile(cond(terrain="Hilly"), signal="speed", dt=1.0, duration=360.0)
    # A 180 s undulation repeats once over 360 s.
    assert hilly.values[10] == pytest.approx(hilly.values[190])
    assert np.std(hilly.values) > 0.1
    ascent = baseline_profile(
        cond(terrain="SteadyAscent"), signal="speed", dt=1.0, duration=360.0
    )
    assert np.all(np.diff(ascent.values) < 0.0)
    descent = baseline_profile(
        cond(terrain="SteadyDescent"), signal="speed", dt=1.0, duration=360.0
    )
    assert np.all(np.diff(descent.values) > 0.0)


def test_baseline_validation():
    with pytest.raises(DomainError):
        baseline_profile(cond(), signal="torque")
    with pytest.raises(DomainError):
        baseline_profile(cond(), dt=0.0)


# ---------------------------------------------------------------------------
# Attacks
# ---------------------------------------------------------------------------


def test_preset_profile_shapes():
    preset = AttackPreset(100.0, 200.0, 0.01, 0.05, 0.08)
    profile, start = preset_profile(preset, Terrain.FLAT_ROAD, 0, 900.0)
    assert start == 100.0
    assert profile.knots == (100.0, 300.0, 900.0)
    assert profile.intervals[0].M == 0.01
    assert profile.intervals[1].M == 0.0
    assert profile.intervals[1].B == 0.08
    # Attack outlasting the run collapses to a single active interval.
    profile, _ = preset_profile(preset, Terrain.FLAT_ROAD, 0, 250.0)
    assert profile.knots == (100.0, 250.0)
    with pytest.raises(RangeError):
        preset_profile(preset, Terrain.FLAT_ROAD, 0, 90.0)


def test_preset_profile_cargo_gain():
    preset = DEFAULT_PRESETS[Attack.SUSPENSION]
    flat, _ = preset_profile(preset, Terrain.FLAT_ROAD, 9000, 900.0)
    hilly, _ = preset_profile(preset, Terrain.HILLY, 9000, 900.0)
    assert flat.intervals[0].M == preset.malware
    assert hilly.intervals[0].M == pytest.approx(preset.malware * 1.8)
    ascent, _ = preset_profile(preset, Terrain.STEADY_ASCENT, 9000, 900.0)
    assert ascent.intervals[0].M == pytest.approx(preset.malware * 1.5)


def test_apply_attack_noop_profile():
    base = baseline_profile(cond(), dt=1.0, duration=500.0)
    profile, start = preset_profile(
        AttackPreset(100.0, 100.0, 0.0, 0.05, 0.08), Terrain.FLAT_ROAD, 0, 500.0
    )
    out = apply_attack(base, Attack.FAN, start, profile)
    assert np.array_equal(out.values, base.values)


def test_apply_attack_matches_model_ratio():
    base = baseline_profile(cond(terrain="Hilly"), dt=0.5, duration=900.0)
    profile, start = preset_profile(
        DEFAULT_PRESETS[Attack.ECU], Terrain.HILLY, 0, 900.0
    )
    out = apply_attack(base, Attack.ECU, start, profile)
    ratio = out.values / base.values
    model = attack_ratio(profile, start, base.times())
    assert np.max(np.abs(ratio - model)) < 1e-12
    assert np.all(ratio[: int(start / 0.5)] == 1.0)


def test_apply_attack_ecu_equilibrium():
    base = baseline_profile(cond(), dt=0.5, duration=900.0)
    profile, start = preset_profile(
        DEFAULT_PRESETS[Attack.ECU], Terrain.FLAT_ROAD, 0, 900.0
    )
    out = apply_attack(base, Attack.ECU, start, profile)
    ratio = out.values / base.values
    # One minute into the attack the curve has settled at the equilibrium
    # and stays there until the attack ends at 600 s.
    settled = ratio[int(360 / 0.5) : int(600 / 0.5)]
    assert np.all(np.abs(settled - 0.92) < 0.01)


def test_apply_attack_validation():
    base = baseline_profile(cond(), dt=1.0, duration=500.0)
    profile, start = preset_profile(
        DEFAULT_PRESETS[Attack.FAN], Terrain.FLAT_ROAD, 0, 500.0
    )
    with pytest.raises(DomainError):
        apply_attack(base, Attack.BASELINE, start, profile)
    with pytest.raises(RangeError):
        apply_attack(base, Attack.FAN, 600.0, profile)
    short, _ = preset_profile(
        DEFAULT_PRESETS[Attack.FAN], Terrain.FLAT_ROAD, 0, 480.0
    )
    with pytest.raises(RangeError):
        apply_attack(base, Attack.FAN, start, short)


# ---------------------------------------------------------------------------
# Driver drift
# ---------------------------------------------------------------------------


def test_drift_zero_sigma_identity():
    series = baseline_profile(cond(), dt=1.0, duration=300.0)
    out = driver_drift(series, seed=5, sigma=0.0)
    assert np.array_equal(out.values, series.values)
    assert out is not series


def test_drift_deterministic_per_seed():
    series = TimeSeries(0.0, 0.5, np.full(2000, 3.0))
    a = driver_drift(series, seed=11)
    b = driver_drift(series, seed=11)
    c = driver_drift(series, seed=12)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    assert np.all(a.values > 0.0)


def test_drift_stationary_scale():
    series = TimeSeries(0.0, 0.5, np.ones(40000))
    out = driver_drift(series, seed=3, sigma=0.05, correlation_time=10.0)
    log_std = float(np.std(np.log(out.values)))
    assert 0.04 < log_std < 0.06


def test_drift_positive_under_large_sigma():
    series = TimeSeries(0.0, 1.0, np.ones(500))
    out = driver_drift(series, seed=2, sigma=1.5)
    assert np.all(out.values > 0.0)


def test_drift_validation():
    series = TimeSeries(0.0, 1.0, np.ones(10))
    with pytest.raises(DomainError):
        driver_drift(series, seed=1, sigma=-0.1)
    with pytest.raises(DomainError):
        driver_drift(series, seed=1, correlation_time=0.0)


def test_drift_thirty_seed_mean_tracks_clean_series():
    # Averaging thirty drifted replicates then median-filtering should sit
    # within 1% of the clean series everywhere.  Flat-road speed is constant,
    # so any residual deviation is attributable to the drift alone.
    clean = baseline_profile(cond(), signal="speed", dt=0.5, duration=900.0)
    children = np.random.SeedSequence((3, 7)).spawn(30)
    acc = np.zeros(clean.n)
    for child in children:
        acc += driver_drift(clean, child, sigma=0.02, correlation_time=30.0).values
    mean = TimeSeries(0.0, 0.5, acc / 30.0)
    filtered_mean = running_median(mean, 72.0)
    deviation = np.abs(filtered_mean.values / clean.values - 1.0)
    assert float(np.max(deviation)) < 0.01


def test_drift_mean_factorizes_over_any_series():
    # Drift is multiplicative, so the replicate mean equals the clean series
    # scaled by the mean drift factor regardless of the series shape.
    clean = baseline_profile(cond(terrain="Hilly"), signal="speed", dt=2.0, duration=300.0)
    flat = TimeSeries(clean.t0, clean.dt, np.ones(clean.n))
    seeds = [np.random.SeedSequence((17, k)) for k in range(8)]
    mean_curved = np.mean(
        [driver_drift(clean, s).values for s in seeds], axis=0
    )
    mean_factor = np.mean([driver_drift(flat, s).values for s in seeds], axis=0)
    np.testing.assert_allclose(mean_curved, clean.values * mean_factor, rtol=1e-12)


# ---------------------------------------------------------------------------
# Grid generation
# ---------------------------------------------------------------------------


def small_design(**overrides) -> GridDesign:
    fields = dict(
        trucks=("Light",),
        terrains=("FlatRoad",),
        attacks=("Baseline", "ECU"),
        cargos_kg=(0,),
        seeds=(1, 2),
        dt=10.0,
        duration=900.0,
    )
    fields.update(overrides)
    return GridDesign(**fields)


def test_default_design_covers_paper_grid():
    design = GridDesign()
    assert design.n_runs == 7200
    assert design.dt == 0.02
    assert design.duration == 900.0


def test_generate_grid_single_cell(tmp_path):
    design = small_design(attacks=("Baseline",), seeds=(1,))
    manifest = generate_grid(design, tmp_path)
    assert len(manifest) == 1
    row = manifest[0]
    assert set(row) == {
        "file",
        "truck",
        "terrain",
        "attack",
        "cargo_kg",
        "seed",
        "attack_start_s",
        "duration_s",
    }
    assert (tmp_path / row["file"]).exists()
    assert json.loads((tmp_path / "manifest.json").read_text()) == manifest


def test_generate_grid_rerun_byte_identical(tmp_path):
    design = small_design()
    first = generate_grid(design, tmp_path)
    bytes_first = {r["file"]: (tmp_path / r["file"]).read_bytes() for r in first}
    manifest_first = (tmp_path / "manifest.json").read_bytes()
    second = generate_grid(design, tmp_path)
    assert first == second
    assert (tmp_path / "manifest.json").read_bytes() == manifest_first
    for row in second:
        assert (tmp_path / row["file"]).read_bytes() == bytes_first[row["file"]]


def test_generate_grid_matches_single_run_synthesis(tmp_path):
    design = small_design()
    manifest = generate_grid(design, tmp_path)
    row = manifest[-1]
    record = synthesize_run(
        Condition(row["truck"], row["terrain"], row["attack"], row["cargo_kg"], row["seed"]),
        design,
    )
    columns = read_run_csv(tmp_path / row["file"])
    for signal in SIGNALS:
        assert np.array_equal(columns[signal], record.signals[signal].values)
    assert row["attack_start_s"] == record.attack_start


def test_sub_grid_reproduces_full_grid_runs(tmp_path):
    wide = small_design(
        trucks=("Light", "Medium"), cargos_kg=(0, 3000), seeds=(1, 2)
    )
    narrow = small_design(trucks=("Medium",), cargos_kg=(3000,), seeds=(2,))
    a = tmp_path / "wide"
    b = tmp_path / "narrow"
    generate_grid(wide, a)
    rows = generate_grid(narrow, b)
    for row in rows:
        assert (a / row["file"]).read_bytes() == (b / row["file"]).read_bytes()


def test_generate_grid_parallel_matches_serial(tmp_path):
    design = small_design()
    serial = generate_grid(design, tmp_path / "serial")
    parallel = generate_grid(design, tmp_path / "parallel", jobs=2)
    assert serial == parallel
    for row in serial:
        assert (tmp_path / "serial" / row["file"]).read_bytes() == (
            tmp_path / "parallel" / row["file"]
        ).read_bytes()


def test_attack_run_equals_baseline_before_start(tmp_path):
    design = small_design(drift_sigma=0.0)
    generate_grid(design, tmp_path)
    attack = read_run_csv(tmp_path / "Light_FlatRoad_ECU_0kg_s01.csv")
    base = read_run_csv(tmp_path / "Light_FlatRoad_Baseline_0kg_s01.csv")
    start = DEFAULT_PRESETS[Attack.ECU].start_s
    pre = attack["time_s"] < start
    assert np.array_equal(attack["fuel_efficiency"][pre], base["fuel_efficiency"][pre])
    ratio = attack["speed"] / base["speed"]
    assert np.min(ratio) > 0.9


def test_grid_ratio_matches_model_when_noise_free(tmp_path):
    design = small_design(drift_sigma=0.0, dt=0.5)
    generate_grid(design, tmp_path)
    attack = read_run_csv(tmp_path / "Light_FlatRoad_ECU_0kg_s01.csv")
    base = read_run_csv(tmp_path / "Light_FlatRoad_Baseline_0kg_s01.csv")
    ratio = ratio_curve(
        TimeSeries(0.0, 0.5, attack["fuel_efficiency"]),
        TimeSeries(0.0, 0.5, base["fuel_efficiency"]),
    )
    profile, start = preset_profile(
        DEFAULT_PRESETS[Attack.ECU], Terrain.FLAT_ROAD, 0, design.t_end
    )
    model = attack_ratio(profile, start, ratio.times())
    assert np.max(np.abs(ratio.values - model)) < 1e-12


def test_read_run_csv_missing_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time_s,fuel_efficiency\n0.0,1.0\n1.0,1.0\n")
    with pytest.raises(ConfigError):
        read_run_csv(path)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def test_config_defaults_and_seed_expansion():
    design = design_from_config(None)
    assert design.n_runs == 7200
    design = design_from_config({"grid": {"seeds": 3, "trucks": ["Heavy"]}})
    assert design.seeds == (1, 2, 3)
    assert design.trucks == (Truck.HEAVY,)


def test_config_run_and_drift_sections():
    design = design_from_config(
        {
            "run": {"dt_s": 0.5, "duration_s": 900},
            "drift": {"sigma": 0.01, "correlation_time_s": 15},
            "base_seed": 99,
        }
    )
    assert design.dt == 0.5
    assert design.drift_sigma == 0.01
    assert design.drift_correlation_s == 15.0
    assert design.base_seed == 99


def test_config_preset_override_merges():
    design = design_from_config({"attacks": {"ECU": {"malware": 0.01}}})
    preset = design.presets[Attack.ECU]
    assert preset.malware == 0.01
    assert preset.start_s == DEFAULT_PRESETS[Attack.ECU].start_s
    assert preset.bonware == DEFAULT_PRESETS[Attack.ECU].bonware


@pytest.mark.parametrize(
    "doc,needle",
    [
        ({"grid": {"trucks": []}}, "empty design"),
        ({"grid": {"wheels": 4}}, "wheels"),
        ({"mystery": {}}, "mystery"),
        ({"attacks": {"Baseline": {"malware": 0.1}}}, "Baseline"),
        ({"attacks": {"ECU": {"strength": 3}}}, "strength"),
        ({"grid": {"seeds": [0]}}, "seed"),
        ({"run": {"dt_s": -1.0}}, "dt"),
        ([1, 2], "mapping"),
    ],
)
def test_config_rejects_bad_documents(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        design_from_config(doc)


def test_load_design_reports_parse_line(tmp_path):
    path = tmp_path / "broken.yaml"
    path.write_text("grid:\n  trucks: [Light\n")
    with pytest.raises(ConfigError, match="line"):
        load_design(path)


def test_load_design_round_trip(tmp_path):
    path = tmp_path / "ok.yaml"
    path.write_text(
        "grid:\n"
        "  trucks: [Light]\n"
        "  terrains: [FlatRoad]\n"
        "  attacks: [Baseline, Fan]\n"
        "  cargos_kg: [0]\n"
        "  seeds: 2\n"
        "run:\n"
        "  dt_s: 1.0\n"
        "  duration_s: 600\n"
    )
    design = load_design(path)
    assert design.n_runs == 4
    assert design.duration == 600.0
