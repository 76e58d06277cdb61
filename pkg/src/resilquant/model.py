"""Impact models for functionality curves.

A system's functionality F(t) obeys

    dF/dt + (M(t) + B(t)) * F(t) = F_N * B(t)

where M(t) >= 0 is the degradation impact, B(t) >= 0 the restorative
impact, and F_N the nominal functionality level.  Four profile kinds are
supported: constant and piecewise-constant impacts (exponential closed
form per interval) and linear and piecewise-linear impacts (scaled-erf
closed form per interval).  Linear impact lines are clamped at zero from
below; each clamp point induces an implicit knot, so every evaluated
segment is clamp-free inside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Sequence, Union

import numpy as np

from .errors import (
    ConfigError,
    DomainError,
    RangeError,
    UndefinedSteadyStateError,
    UnsupportedCoefficientsError,
)
from .numerics import TimeSeries, erfcx

__all__ = [
    "ImpactKind",
    "ConstantImpact",
    "LinearImpact",
    "ImpactProfile",
    "ModelState",
    "eval_constant",
    "steady_state",
    "eval_piecewise_constant",
    "eval_linear",
    "eval_piecewise_linear",
    "governing_derivative",
    "sample_curve",
    "scenario_to_json",
    "scenario_from_json",
]

_SPAN_EPS = 1e-9
# Exponent beyond which exp() in the growth branch is allowed to overflow to
# inf: the underlying solution itself is astronomically large there.
_EXP_MAX = 700.0


class ImpactKind(str, Enum):
    CONSTANT = "Constant"
    PIECEWISE_CONSTANT = "PiecewiseConstant"
    LINEAR = "Linear"
    PIECEWISE_LINEAR = "PiecewiseLinear"


@dataclass(frozen=True)
class ConstantImpact:
    """Constant degradation/restoration pair on one interval."""

    M: float
    B: float

    def __post_init__(self):
        if not (math.isfinite(self.M) and math.isfinite(self.B)):
            raise DomainError("impact values must be finite")
        if self.M < 0 or self.B < 0:
            raise DomainError("constant impacts must be non-negative")


@dataclass(frozen=True)
class LinearImpact:
    """Linear impact lines on one interval, in interval-local time tau:

        M(tau) = max(nu - mu * tau, 0)
        B(tau) = max(alpha - beta * tau, 0)
    """

    nu: float
    mu: float
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("nu", "mu", "alpha", "beta"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")


IntervalSpec = Union[ConstantImpact, LinearImpact]


@dataclass(frozen=True)
class _Segment:
    """Clamp-free evaluation segment: [t_lo, t_hi] with local coefficients."""

    t_lo: float
    t_hi: float
    spec: IntervalSpec


class ModelState:
    """Nominal level, initial value and start time of a functionality curve."""

    __slots__ = ("F_N", "F0", "t0")

    def __init__(self, F_N: float = 1.0, F0: float = 1.0, t0: float = 0.0):
        if not (math.isfinite(F_N) and math.isfinite(F0) and math.isfinite(t0)):
            raise DomainError("ModelState fields must be finite")
        if F_N <= 0:
            raise DomainError("F_N must be positive")
        if not (0 < F0 <= F_N):
            raise DomainError("F0 must lie in (0, F_N]")
        self.F_N = float(F_N)
        self.F0 = float(F0)
        self.t0 = float(t0)

    def __repr__(self):
        return f"ModelState(F_N={self.F_N!r}, F0={self.F0!r}, t0={self.t0!r})"

    def __eq__(self, other):
        if not isinstance(other, ModelState):
            return NotImplemented
        return (self.F_N, self.F0, self.t0) == (other.F_N, other.F0, other.t0)


@dataclass(frozen=True)
class ImpactProfile:
    """A sequence of impact intervals over strictly increasing knots.

    Interval j covers [knots[j], knots[j+1]); the final knot belongs to the
    last interval.  The non-piecewise kinds carry exactly one interval.
    """

    kind: ImpactKind
    knots: tuple
    intervals: tuple

    def __post_init__(self):
        kind = ImpactKind(self.kind)
        knots = tuple(float(k) for k in self.knots)
        intervals = tuple(self.intervals)
        if len(knots) < 2:
            raise DomainError("a profile needs at least two knots")
        if any(not math.isfinite(k) for k in knots):
            raise DomainError("knots must be finite")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise DomainError("knots must be strictly increasing")
        if len(intervals) != len(knots) - 1:
            raise DomainError("need exactly one interval spec per knot gap")
        expected = (
            ConstantImpact
            if kind in (ImpactKind.CONSTANT, ImpactKind.PIECEWISE_CONSTANT)
            else LinearImpact
        )
        if not all(isinstance(iv, expected) for iv in intervals):
            raise DomainError(f"{kind.value} profiles need {expected.__name__} intervals")
        if kind in (ImpactKind.CONSTANT, ImpactKind.LINEAR) and len(intervals) != 1:
            raise DomainError(f"{kind.value} profiles carry exactly one interval")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "intervals", intervals)

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(M: float, B: float, t0: float, t_end: float) -> "ImpactProfile":
        return ImpactProfile(ImpactKind.CONSTANT, (t0, t_end), (ConstantImpact(M, B),))

    @staticmethod
    def piecewise_constant(
        knots: Sequence[float], pairs: Sequence[tuple]
    ) -> "ImpactProfile":
        specs = tuple(ConstantImpact(M, B) for (M, B) in pairs)
        return ImpactProfile(ImpactKind.PIECEWISE_CONSTANT, tuple(knots), specs)

    @staticmethod
    def linear(
        nu: float, mu: float, alpha: float, beta: float, t0: float, t_end: float
    ) -> "ImpactProfile":
        return ImpactProfile(
            ImpactKind.LINEAR, (t0, t_end), (LinearImpact(nu, mu, alpha, beta),)
        )

    @staticmethod
    def piecewise_linear(
        knots: Sequence[float], coeffs: Sequence[tuple]
    ) -> "ImpactProfile":
        specs = tuple(LinearImpact(*c) for c in coeffs)
        return ImpactProfile(ImpactKind.PIECEWISE_LINEAR, tuple(knots), specs)

    # -- basic queries ------------------------------------------------------

    @property
    def span(self) -> tuple:
        return (self.knots[0], self.knots[-1])

    def _check_span(self, t: np.ndarray):
        lo, hi = self.span
        slack = _SPAN_EPS * max(1.0, abs(lo), abs(hi))
        if np.any(t < lo - slack) or np.any(t > hi + slack):
            raise RangeError(f"time outside profile span [{lo!r}, {hi!r}]")

    def _interval_indices(self, t: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(np.asarray(self.knots), t, side="right") - 1
        return np.clip(idx, 0, len(self.intervals) - 1)

    def impacts_at(self, t):
        """Clamped (M, B) values at time(s) t within the span."""
        arr = np.atleast_1d(np.asarray(t, dtype=float))
        self._check_span(arr)
        idx = self._interval_indices(arr)
        M = np.empty_like(arr)
        B = np.empty_like(arr)
        knots = np.asarray(self.knots)
        for j, spec in enumerate(self.intervals):
            sel = idx == j
            if not np.any(sel):
                continue
            if isinstance(spec, ConstantImpact):
                M[sel] = spec.M
                B[sel] = spec.B
            else:
                tau = arr[sel] - knots[j]
                M[sel] = np.maximum(spec.nu - spec.mu * tau, 0.0)
                B[sel] = np.maximum(spec.alpha - spec.beta * tau, 0.0)
        if np.isscalar(t) or np.asarray(t).ndim == 0:
            return float(M[0]), float(B[0])
        return M, B

    # -- clamp-free segmentation -------------------------------------------

    @cached_property
    def segments(self) -> tuple:
        """Clamp-free segments covering the span, splitting linear intervals
        wherever an impact line crosses zero (the implicit knots)."""
        segs = []
        for j, spec in enumerate(self.intervals):
            a, b = self.knots[j], self.knots[j + 1]
            if isinstance(spec, ConstantImpact):
                segs.append(_Segment(a, b, spec))
                continue
            cuts = {a, b}
            length = b - a
            for value, slope in ((spec.nu, spec.mu), (spec.alpha, spec.beta)):
                if slope != 0.0:
                    tau_x = value / slope
                    if _SPAN_EPS * length < tau_x < length * (1 - _SPAN_EPS):
                        cuts.add(a + tau_x)
            bounds = sorted(cuts)
            for lo, hi in zip(bounds, bounds[1:]):
                mid_tau = 0.5 * (lo + hi) - a
                m_mid = spec.nu - spec.mu * mid_tau
                b_mid = spec.alpha - spec.beta * mid_tau
                tau0 = lo - a
                nu_loc, mu_loc = (
                    (spec.nu - spec.mu * tau0, spec.mu) if m_mid > 0 else (0.0, 0.0)
                )
                al_loc, be_loc = (
                    (spec.alpha - spec.beta * tau0, spec.beta)
                    if b_mid > 0
                    else (0.0, 0.0)
                )
                segs.append(
                    _Segment(lo, hi, LinearImpact(nu_loc, mu_loc, al_loc, be_loc))
                )
        return tuple(segs)


# ---------------------------------------------------------------------------
# Closed-form evaluators
# ---------------------------------------------------------------------------


def _as_times(t) -> tuple:
    arr = np.atleast_1d(np.asarray(t, dtype=float))
    scalar = np.isscalar(t) or np.asarray(t).ndim == 0
    if not np.all(np.isfinite(arr)):
        raise DomainError("evaluation times must be finite")
    return arr, scalar


def eval_constant(state: ModelState, M: float, B: float, t):
    """Constant-impact solution from (state.t0, state.F0).

    F(t) = (F0 - F_N*B/Q) * exp(-Q*(t - t0)) + F_N*B/Q  with Q = M + B;
    the Q = 0 degeneracy yields the constant F0.
    """
    if not (math.isfinite(M) and math.isfinite(B)):
        raise DomainError("M and B must be finite")
    if M < 0 or B < 0:
        raise DomainError("M and B must be non-negative")
    arr, scalar = _as_times(t)
    slack = _SPAN_EPS * max(1.0, abs(state.t0))
    if np.any(arr < state.t0 - slack):
        raise RangeError(f"time precedes curve start t0 = {state.t0!r}")
    out = _constant_values(state.F0, state.F_N, M, B, arr - state.t0)
    return float(out[0]) if scalar else out


def _constant_values(F0, F_N, M, B, tau):
    Q = M + B
    if Q == 0.0:
        return np.full_like(np.asarray(tau, dtype=float), F0)
    level = F_N * B / Q
    return (F0 - level) * np.exp(-Q * np.maximum(tau, 0.0)) + level


def steady_state(state: ModelState, M: float, B: float) -> float:
    """Long-time limit F_N * B / (M + B); undefined when M + B = 0."""
    if not (math.isfinite(M) and math.isfinite(B)):
        raise DomainError("M and B must be finite")
    if M < 0 or B < 0:
        raise DomainError("M and B must be non-negative")
    Q = M + B
    if Q <= 0:
        raise UndefinedSteadyStateError("steady state undefined for M + B = 0")
    return state.F_N * B / Q


def eval_piecewise_constant(state: ModelState, profile: ImpactProfile, t):
    """Piecewise-constant solution chained across the profile's intervals."""
    if profile.kind not in (ImpactKind.CONSTANT, ImpactKind.PIECEWISE_CONSTANT):
        raise DomainError(f"expected a constant-kind profile, got {profile.kind.value}")
    return _eval_chained(state, profile, t)


def eval_linear(state: ModelState, coeffs: LinearImpact, t):
    """Linear-impact solution with raw (unclamped) lines from (t0, F0).

    Requires omega = beta + mu >= 0; omega = 0 uses the analytic limit and
    omega < 0 is outside the supported closed-form family.
    """
    omega = coeffs.beta + coeffs.mu
    if omega < 0:
        raise UnsupportedCoefficientsError(
            f"omega = beta + mu = {omega!r} < 0 has no supported closed form; "
            "integrate the governing derivative instead"
        )
    arr, scalar = _as_times(t)
    slack = _SPAN_EPS * max(1.0, abs(state.t0))
    if np.any(arr < state.t0 - slack):
        raise RangeError(f"time precedes curve start t0 = {state.t0!r}")
    tau = np.maximum(arr - state.t0, 0.0)
    out = np.array(
        [_linear_value(state.F0, state.F_N, coeffs, tv) for tv in tau], dtype=float
    )
    return float(out[0]) if scalar else out


def _linear_value(F0: float, F_N: float, c: LinearImpact, tau: float) -> float:
    """Scalar closed-form value for raw linear impact lines at elapsed tau."""
    omega = c.beta + c.mu
    lam = c.alpha + c.nu
    if tau == 0.0:
        return F0
    if omega == 0.0:
        # Analytic omega -> 0 limit: the driving term stays linear in time.
        if lam == 0.0:
            return F0 + F_N * (c.alpha * tau - 0.5 * c.beta * tau * tau)
        decay = math.exp(-lam * tau)
        part = F_N * (c.alpha - c.beta * tau) / lam + F_N * c.beta / (lam * lam)
        part0 = F_N * c.alpha / lam + F_N * c.beta / (lam * lam)
        return decay * (F0 - part0) + part

    lam_s = lam / math.sqrt(2.0 * omega)
    u = math.sqrt(0.5 * omega) * tau - lam_s
    expo = u * u - lam_s * lam_s  # equals -(lam*tau - omega*tau^2/2)
    pref = math.exp(expo) if expo <= _EXP_MAX else math.inf
    ratio = c.beta / omega
    coef = (
        (c.alpha * omega - c.beta * lam)
        * math.sqrt(0.5 * math.pi)
        / (omega * math.sqrt(omega))
    )
    if coef == 0.0:
        # Skip the erf bracket entirely: a zero coefficient must not pick up
        # NaN from an overflowing bracket (0 * inf).
        return F_N * (pref * (F0 / F_N - ratio) + ratio)
    if u <= 0.0:
        # Stable form: both erfcx arguments are non-negative and pref <= 1.
        p = erfcx(-u) - pref * erfcx(lam_s)
    else:
        eu2 = math.exp(u * u) if u * u <= _EXP_MAX else math.inf
        p = 2.0 * eu2 - erfcx(u) - pref * erfcx(lam_s)
    return F_N * (pref * (F0 / F_N - ratio) + ratio + coef * p)


def eval_piecewise_linear(state: ModelState, profile: ImpactProfile, t):
    """Piecewise-linear solution chained across clamp-free segments."""
    if profile.kind not in (ImpactKind.LINEAR, ImpactKind.PIECEWISE_LINEAR):
        raise DomainError(f"expected a linear-kind profile, got {profile.kind.value}")
    return _eval_chained(state, profile, t)


def _segment_value(F_start: float, F_N: float, seg: _Segment, tau):
    """Value(s) inside one clamp-free segment at elapsed tau from its start."""
    if isinstance(seg.spec, ConstantImpact):
        return _constant_values(F_start, F_N, seg.spec.M, seg.spec.B, tau)
    c = seg.spec
    omega = c.beta + c.mu
    if omega < 0:
        raise UnsupportedCoefficientsError(
            f"segment [{seg.t_lo!r}, {seg.t_hi!r}] has omega = {omega!r} < 0; "
            "no supported closed form (integrate the governing derivative instead)"
        )
    if np.isscalar(tau):
        return _linear_value(F_start, F_N, c, float(tau))
    return np.array([_linear_value(F_start, F_N, c, tv) for tv in tau], dtype=float)


def _eval_chained(state: ModelState, profile: ImpactProfile, t):
    if abs(state.t0 - profile.knots[0]) > _SPAN_EPS * max(1.0, abs(state.t0)):
        raise DomainError(
            f"state.t0 = {state.t0!r} must coincide with the first knot "
            f"{profile.knots[0]!r}"
        )
    arr, scalar = _as_times(t)
    profile._check_span(arr)
    segs = profile.segments
    # Chain the start value through segment boundaries.
    starts = [state.F0]
    for seg in segs[:-1]:
        F_end = _segment_value(starts[-1], state.F_N, seg, seg.t_hi - seg.t_lo)
        starts.append(float(F_end))
    out = np.empty_like(arr)
    lo_bounds = np.array([s.t_lo for s in segs])
    idx = np.clip(np.searchsorted(lo_bounds, arr, side="right") - 1, 0, len(segs) - 1)
    for j, seg in enumerate(segs):
        sel = idx == j
        if not np.any(sel):
            continue
        tau = np.maximum(arr[sel] - seg.t_lo, 0.0)
        out[sel] = _segment_value(starts[j], state.F_N, seg, tau)
    return float(out[0]) if scalar else out


def governing_derivative(state: ModelState, profile: ImpactProfile, t: float, F: float):
    """Right-hand side dF/dt = B(t) * (F_N - F) - M(t) * F with clamped impacts.

    Valid for every profile kind, including ones outside the closed-form
    family, so a numerical integrator can always be applied.
    """
    if not math.isfinite(F):
        raise DomainError("F must be finite")
    M, B = profile.impacts_at(t)
    return B * (state.F_N - F) - M * F


def sample_curve(state: ModelState, profile: ImpactProfile, dt: float) -> TimeSeries:
    """Sample the profile's closed form over its span with period dt.

    A dt larger than the span degrades to the two endpoint samples.
    """
    if not (math.isfinite(dt) and dt > 0):
        raise DomainError(f"dt must be positive and finite, got {dt!r}")
    lo, hi = profile.span
    span = hi - lo
    if dt >= span:
        times = np.array([lo, hi])
        eff_dt = span
    else:
        n = int(math.floor(span / dt + _SPAN_EPS))
        times = lo + dt * np.arange(n + 1)
        eff_dt = dt
    if profile.kind in (ImpactKind.CONSTANT, ImpactKind.PIECEWISE_CONSTANT):
        vals = eval_piecewise_constant(state, profile, times)
    else:
        vals = eval_piecewise_linear(state, profile, times)
    return TimeSeries(t0=lo, dt=eff_dt, values=vals)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def scenario_to_json(state: ModelState, profile: ImpactProfile) -> dict:
    """Serialize a (state, profile) pair to a plain JSON-ready dict."""
    intervals = []
    for spec in profile.intervals:
        if isinstance(spec, ConstantImpact):
            intervals.append({"M": spec.M, "B": spec.B})
        else:
            intervals.append(
                {"nu": spec.nu, "mu": spec.mu, "alpha": spec.alpha, "beta": spec.beta}
            )
    return {
        "kind": profile.kind.value,
        "knots": list(profile.knots),
        "intervals": intervals,
        "F_N": state.F_N,
        "F0": state.F0,
        "t0": state.t0,
    }


def scenario_from_json(doc: dict):
    """Inverse of scenario_to_json; raises ConfigError on malformed input."""
    try:
        kind = ImpactKind(doc["kind"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"unknown or missing profile kind: {exc}") from exc
    try:
        knots = tuple(float(k) for k in doc["knots"])
        raw = doc["intervals"]
        if kind in (ImpactKind.CONSTANT, ImpactKind.PIECEWISE_CONSTANT):
            intervals = tuple(ConstantImpact(d["M"], d["B"]) for d in raw)
        else:
            intervals = tuple(
                LinearImpact(d["nu"], d["mu"], d["alpha"], d["beta"]) for d in raw
            )
        profile = ImpactProfile(kind, knots, intervals)
        state = ModelState(F_N=doc["F_N"], F0=doc["F0"], t0=doc["t0"])
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario document: {exc}") from exc
    if abs(state.t0 - profile.knots[0]) > 1e-9 * max(1.0, abs(state.t0)):
        raise ConfigError("scenario t0 must equal the first knot")
    return state, profile
