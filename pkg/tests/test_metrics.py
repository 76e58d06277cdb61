"""Tests for the resilience measures."""

import math

import numpy as np
import pytest

from resilquant.errors import (
    AlignmentError,
    DegenerateBaselineError,
    DomainError,
    InsufficientDataError,
    PairingError,
    RangeError,
)
from resilquant.metrics import (
    ResilienceValue,
    UtilityWeights,
    auc,
    bootstrap_ci,
    ratio_curve,
    resilience_r,
    weighted_resilience,
)
from resilquant.numerics import TimeSeries


def flat(value, n=101, dt=0.1, t0=0.0):
    return TimeSeries(t0, dt, np.full(n, float(value)))


# ---------------------------------------------------------------------------
# Carriers
# ---------------------------------------------------------------------------


def test_resilience_value_validation():
    v = ResilienceValue(R=0.8, ci_low=0.7, ci_high=0.9, n_runs=30, window=(0.0, 900.0))
    assert v.n_runs == 30
    with pytest.raises(DomainError):
        ResilienceValue(R=-0.1, ci_low=-0.2, ci_high=0.0, n_runs=1, window=(0.0, 1.0))
    with pytest.raises(DomainError):
        ResilienceValue(R=0.5, ci_low=0.6, ci_high=0.9, n_runs=1, window=(0.0, 1.0))
    with pytest.raises(DomainError):
        ResilienceValue(R=0.5, ci_low=0.4, ci_high=0.6, n_runs=0, window=(0.0, 1.0))
    with pytest.raises(DomainError):
        ResilienceValue(R=0.5, ci_low=0.4, ci_high=0.6, n_runs=1, window=(1.0, 1.0))


def test_utility_weights_validation():
    w = UtilityWeights((("fuel_efficiency", 0.5), ("speed", 0.5)))
    assert w.as_dict() == {"fuel_efficiency": 0.5, "speed": 0.5}
    with pytest.raises(DomainError):
        UtilityWeights((("a", 0.5), ("b", 0.6)))
    with pytest.raises(DomainError):
        UtilityWeights((("a", -0.5), ("b", 1.5)))
    with pytest.raises(DomainError):
        UtilityWeights((("a", 0.5), ("a", 0.5)))
    with pytest.raises(DomainError):
        UtilityWeights(())


# ---------------------------------------------------------------------------
# AUC
# ---------------------------------------------------------------------------


def test_auc_constant_is_level():
    assert auc(flat(1.0), 0.0, 10.0) == pytest.approx(1.0, abs=1e-12)
    assert auc(flat(1.0), 2.0, 7.0) == pytest.approx(1.0, abs=1e-12)
    assert auc(flat(3.7), 0.0, 10.0) == pytest.approx(3.7, abs=1e-12)


def test_auc_exponential_window():
    t = np.arange(0.0, 1.0 + 1e-12, 0.01)
    s = TimeSeries(0.0, 0.01, np.exp(-t))
    assert abs(auc(s, 0.0, 1.0) - 0.6321206) < 1e-4


def test_auc_empty_window_rejected():
    with pytest.raises(RangeError):
        auc(flat(1.0), 5.0, 5.0)


# ---------------------------------------------------------------------------
# Resilience measure
# ---------------------------------------------------------------------------


def test_resilience_identity_zero_and_half():
    base = flat(2.0)
    assert resilience_r(base, base, 0.0, 10.0) == pytest.approx(1.0, abs=1e-15)
    assert resilience_r(flat(0.0), base, 0.0, 10.0) == 0.0
    assert resilience_r(flat(1.0), base, 0.0, 10.0) == pytest.approx(0.5, abs=1e-15)


def test_resilience_degenerate_baseline():
    with pytest.raises(DegenerateBaselineError):
        resilience_r(flat(1.0), flat(0.0), 0.0, 10.0)


def test_resilience_scale_invariance():
    rng = np.random.default_rng(41)
    for _ in range(25):
        a = TimeSeries(0.0, 0.1, rng.uniform(0.2, 1.0, 101))
        b = TimeSeries(0.0, 0.1, rng.uniform(0.5, 1.5, 101))
        c = rng.uniform(1e-3, 1e3)
        r1 = resilience_r(a, b, 0.0, 10.0)
        r2 = resilience_r(
            TimeSeries(0.0, 0.1, c * a.values),
            TimeSeries(0.0, 0.1, c * b.values),
            0.0,
            10.0,
        )
        assert abs(r1 - r2) < 1e-12


def test_resilience_bounded_under_domination():
    rng = np.random.default_rng(43)
    for _ in range(25):
        b = rng.uniform(0.5, 1.5, 101)
        a = b * rng.uniform(0.0, 1.0, 101)
        r = resilience_r(TimeSeries(0.0, 0.1, a), TimeSeries(0.0, 0.1, b), 0.0, 10.0)
        assert 0.0 <= r <= 1.0


def test_resilience_constant_model_analytic_value():
    # For the constant model from full functionality over [0, T] against a
    # flat unit baseline: R = B/Q + (M/Q^2) * (1 - e^(-Q T)) / T.
    from resilquant.model import ImpactProfile, ModelState, sample_curve

    for M, B, T in ((0.025, 0.005, 125.0), (0.3, 0.7, 40.0), (0.08, 0.02, 200.0)):
        Q = M + B
        prof = ImpactProfile.constant(M, B, 0.0, T)
        curve = sample_curve(ModelState(1.0, 1.0, 0.0), prof, 0.01)
        base = TimeSeries(0.0, 0.01, np.ones(curve.n))
        got = resilience_r(curve, base, 0.0, T)
        want = B / Q + (M / Q**2) * (1.0 - math.exp(-Q * T)) / T
        assert abs(got - want) < 1e-4


# ---------------------------------------------------------------------------
# Weighted combination
# ---------------------------------------------------------------------------


def test_weighted_resilience_examples():
    w1 = UtilityWeights((("fuel", 1.0),))
    assert weighted_resilience([("fuel", 0.83)], w1) == pytest.approx(0.83)
    w2 = UtilityWeights((("fuel", 0.5), ("speed", 0.5)))
    assert weighted_resilience([("fuel", 0.8), ("speed", 0.6)], w2) == pytest.approx(0.7)
    w3 = UtilityWeights((("fuel", 0.9), ("speed", 0.1)))
    assert weighted_resilience([("fuel", 1.0), ("speed", 0.0)], w3) == pytest.approx(0.9)


def test_weighted_resilience_stays_within_extremes():
    rng = np.random.default_rng(47)
    for _ in range(50):
        rs = rng.uniform(0.0, 1.2, 3)
        raw = rng.uniform(0.01, 1.0, 3)
        us = raw / raw.sum()
        w = UtilityWeights(tuple(zip("abc", us)))
        got = weighted_resilience(list(zip("abc", rs)), w)
        assert rs.min() - 1e-12 <= got <= rs.max() + 1e-12


def test_weighted_resilience_missing_objective():
    w = UtilityWeights((("fuel", 0.5), ("speed", 0.5)))
    with pytest.raises(PairingError):
        weighted_resilience([("fuel", 0.8)], w)


# ---------------------------------------------------------------------------
# Ratio curve
# ---------------------------------------------------------------------------


def test_ratio_curve_identity_and_scalar():
    rng = np.random.default_rng(53)
    b = TimeSeries(0.0, 0.02, rng.uniform(3.0, 8.0, 200))
    np.testing.assert_allclose(ratio_curve(b, b).values, 1.0, rtol=0.0, atol=1e-15)
    a = TimeSeries(0.0, 0.02, 0.92 * b.values)
    np.testing.assert_allclose(ratio_curve(a, b).values, 0.92, rtol=0.0, atol=1e-14)


def test_ratio_curve_is_not_clamped():
    b = flat(1.0, n=10, dt=1.0)
    a = TimeSeries(0.0, 1.0, np.full(10, 1.07))
    assert np.all(ratio_curve(a, b).values > 1.0)


def test_ratio_curve_alignment_errors():
    b = flat(1.0, n=10, dt=1.0)
    with pytest.raises(AlignmentError):
        ratio_curve(flat(1.0, n=11, dt=1.0), b)
    with pytest.raises(AlignmentError):
        ratio_curve(flat(1.0, n=10, dt=0.5), b)
    with pytest.raises(AlignmentError):
        ratio_curve(flat(1.0, n=10, dt=1.0, t0=1.0), b)


def test_ratio_curve_degenerate_baseline_carries_index():
    v = np.ones(10)
    v[7] = 0.0
    with pytest.raises(DegenerateBaselineError) as info:
        ratio_curve(flat(1.0, n=10, dt=1.0), TimeSeries(0.0, 1.0, v))
    assert info.value.index == 7


# ---------------------------------------------------------------------------
# Bootstrap
# ---------------------------------------------------------------------------


def test_bootstrap_zero_variance_collapses():
    low, high = bootstrap_ci([0.42] * 10, 0.95, 500, seed=5)
    assert low == pytest.approx(0.42) and high == pytest.approx(0.42)


def test_bootstrap_bernoulli_interval():
    values = [0.0, 1.0] * 15
    low, high = bootstrap_ci(values, 0.95, 10_000, seed=9)
    assert 0.0 <= low < 0.5 < high <= 1.0


def test_bootstrap_deterministic_by_seed():
    values = list(np.random.default_rng(61).uniform(0.5, 1.0, 30))
    assert bootstrap_ci(values, 0.95, 3000, seed=7) == bootstrap_ci(
        values, 0.95, 3000, seed=7
    )
    assert bootstrap_ci(values, 0.95, 3000, seed=7) != bootstrap_ci(
        values, 0.95, 3000, seed=8
    )


def test_bootstrap_input_validation():
    with pytest.raises(InsufficientDataError):
        bootstrap_ci([1.0], 0.95, 100, seed=0)
    with pytest.raises(DomainError):
        bootstrap_ci([1.0, 2.0], 1.5, 100, seed=0)
    with pytest.raises(DomainError):
        bootstrap_ci([1.0, math.nan], 0.95, 100, seed=0)
