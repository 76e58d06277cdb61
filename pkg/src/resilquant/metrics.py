"""Resilience measures over performance curves.

The area under a normalized performance curve, averaged over its window, is
the basic unit: dividing an attack run's area by the paired baseline's area
yields the resilience measure, multiple per-objective measures combine
through utility weights, and repeated runs get percentile-bootstrap
confidence intervals.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .errors import (
    AlignmentError,
    DegenerateBaselineError,
    DomainError,
    InsufficientDataError,
    PairingError,
    RangeError,
)
from .numerics import TimeSeries, trapezoid

_WEIGHT_SUM_TOL = 1e-9


@dataclass(frozen=True)
class ResilienceValue:
    """Point estimate with its confidence interval and provenance counts."""

    R: float
    ci_low: float
    ci_high: float
    n_runs: int
    window: Tuple[float, float]

    def __post_init__(self):
        if not np.isfinite(self.R) or self.R < 0:
            raise DomainError(f"R must be finite and non-negative, got {self.R!r}")
        if not (self.ci_low <= self.R <= self.ci_high):
            raise DomainError(
                f"interval [{self.ci_low!r}, {self.ci_high!r}] must bracket R={self.R!r}"
            )
        if int(self.n_runs) != self.n_runs or self.n_runs < 1:
            raise DomainError("n_runs must be a positive integer")
        t0, t_end = self.window
        if not t_end > t0:
            raise DomainError("window must have positive length")


@dataclass(frozen=True)
class UtilityWeights:
    """Named non-negative objective weights summing to one."""

    items: Tuple[Tuple[str, float], ...]

    def __post_init__(self):
        items = tuple((str(n), float(u)) for n, u in self.items)
        object.__setattr__(self, "items", items)
        names = [n for n, _ in items]
        if not items:
            raise DomainError("weights must name at least one objective")
        if len(set(names)) != len(names):
            raise DomainError("objective names must be unique")
        for name, u in items:
            if not np.isfinite(u) or u < 0:
                raise DomainError(f"weight for {name!r} must be finite and >= 0")
        total = sum(u for _, u in items)
        if abs(total - 1.0) > _WEIGHT_SUM_TOL:
            raise DomainError(f"weights must sum to 1, got {total!r}")

    def as_dict(self) -> dict:
        return dict(self.items)


def auc(series: TimeSeries, t0: float, t_end: float) -> float:
    """Window-averaged area under the curve: integral divided by length."""
    if not t_end > t0:
        raise RangeError(f"window [{t0!r}, {t_end!r}] must have positive length")
    return trapezoid(series, t0, t_end) / (t_end - t0)


def resilience_r(
    attack: TimeSeries, baseline: TimeSeries, t0: float, t_end: float
) -> float:
    """Fraction of baseline functionality maintained during the attack run."""
    denom = trapezoid(baseline, t0, t_end)
    if denom <= 0.0:
        raise DegenerateBaselineError(
            f"baseline integral over [{t0!r}, {t_end!r}] is {denom!r}; "
            "the measure needs a positive baseline"
        )
    return trapezoid(attack, t0, t_end) / denom


def weighted_resilience(
    values: Sequence[Tuple[str, float]], weights: UtilityWeights
) -> float:
    """Utility-weighted combination of per-objective resilience values."""
    table = {}
    for name, r in values:
        table[str(name)] = float(r)
    total = 0.0
    for name, u in weights.items:
        if name not in table:
            raise PairingError(f"no resilience value for weighted objective {name!r}")
        total += u * table[name]
    return total


def ratio_curve(attack: TimeSeries, baseline: TimeSeries) -> TimeSeries:
    """Pointwise attack/baseline ratio on a shared grid.

    The result is the normalized functionality curve handed to fitting; it
    is deliberately not clamped at 1, since noise legitimately pushes above
    and clamping would bias the measure upward.
    """
    if attack.n != baseline.n:
        raise AlignmentError(
            f"sample counts differ: attack has {attack.n}, baseline {baseline.n}"
        )
    if abs(attack.t0 - baseline.t0) > 1e-9 * max(1.0, abs(attack.t0)):
        raise AlignmentError(
            f"start times differ: attack at {attack.t0!r}, baseline {baseline.t0!r}"
        )
    if abs(attack.dt - baseline.dt) > 1e-12 * max(1.0, abs(attack.dt)):
        raise AlignmentError(
            f"sample periods differ: attack {attack.dt!r}, baseline {baseline.dt!r}"
        )
    bad = np.nonzero(baseline.values <= 0.0)[0]
    if bad.size:
        raise DegenerateBaselineError(
            f"baseline sample at index {int(bad[0])} is not positive",
            index=int(bad[0]),
        )
    return TimeSeries(attack.t0, attack.dt, attack.values / baseline.values)


def bootstrap_ci(
    per_run_values: Sequence[float],
    confidence: float = 0.95,
    resamples: int = 2000,
    seed: int = 0,
) -> Tuple[float, float]:
    """Percentile bootstrap interval for the mean of per-run values."""
    arr = np.asarray(per_run_values, dtype=float)
    if arr.ndim != 1 or arr.size < 2:
        raise InsufficientDataError(
            f"bootstrap needs at least 2 values, got {arr.size}"
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError("per-run values must be finite")
    if not 0.0 < confidence < 1.0:
        raise DomainError(f"confidence must lie in (0, 1), got {confidence!r}")
    if int(resamples) != resamples or resamples < 1:
        raise DomainError("resamples must be a positive integer")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, arr.size, size=(int(resamples), arr.size))
    means = arr[idx].mean(axis=1)
    tail = 100.0 * (1.0 - confidence) / 2.0
    low, high = np.percentile(means, [tail, 100.0 - tail])
    return float(low), float(high)
