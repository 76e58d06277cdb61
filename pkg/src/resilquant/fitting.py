"""Piecewise-constant model extraction from normalized performance curves.

The pipeline: locate the switching time where the trend reverses, solve the
fast two-phase system (one bisection per phase), optionally polish all five
parameters with a damped Gauss-Newton pass, and report decline/recovery
onsets detected by threshold crossings.
"""

import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Tuple

import numpy as np

from .errors import (
    DomainError,
    FitInfeasibleError,
    NoAttackDetectedError,
    NoRecoveryError,
)
from .model import ImpactProfile, ModelState, eval_piecewise_constant
from .numerics import TimeSeries, Tolerance

# Upper end of every bisection bracket for total impact Q = M + B; also the
# saturation value returned when the recovery target is already met.
Q_MAX = 10.0

# Width of the near-minimum band as a fraction of the curve's value range.
_FLATNESS_FRACTION = 0.01

# Noise floor applied to the recovery-onset band: the band is inflated to
# this multiple of the pre-decline standard deviation, provided that stretch
# holds enough samples to estimate a spread at all.
_T2_NOISE_MULT = 3.0
_T2_NOISE_MIN_SAMPLES = 16

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class FastFitHyperparams:
    """Tuning constants of the fast two-phase solver.

    alpha fixes how close to its asymptote the declining phase is assumed to
    be at the switching time; alpha_tilde and zeta play the same role for
    the recovering phase and its target level.
    """

    alpha: float = 1.0 - 1.0 / math.e
    alpha_tilde: float = 1.0 - math.exp(-4.0)
    zeta: float = 0.95
    min_window: float = 11.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DomainError("alpha must lie in (0, 1)")
        if not 0.0 < self.alpha_tilde < 1.0:
            raise DomainError("alpha_tilde must lie in (0, 1)")
        if not 0.0 < self.zeta <= 1.0:
            raise DomainError("zeta must lie in (0, 1]")
        if not (math.isfinite(self.min_window) and self.min_window > 0):
            raise DomainError("min_window must be a positive duration")


DEFAULT_HYPER = FastFitHyperparams()


class PhaseEstimate(NamedTuple):
    """One phase's impact estimates; degenerate marks a no-signal fit."""

    M: float
    B: float
    degenerate: bool = False


@dataclass(frozen=True)
class PiecewiseConstantFit:
    """Fitted two-phase (or degenerate single-phase) model description.

    phases holds (t_from, t_to, M, B) rows tiling [t1, end]; t_star is the
    switching time, m the observed minimum, t1/t2 the decline and recovery
    onsets, rmse the residual against the source curve.
    """

    t_star: float
    m: float
    phases: Tuple[Tuple[float, float, float, float], ...]
    t1: float
    t2: float
    rmse: float
    refined: bool = False

    def __post_init__(self):
        if not self.phases:
            raise DomainError("a fit needs at least one phase")
        phases = tuple(
            (float(a), float(b), float(M), float(B)) for (a, b, M, B) in self.phases
        )
        object.__setattr__(self, "phases", phases)
        scale = max(1.0, abs(phases[0][0]), abs(phases[-1][1]))
        for t_from, t_to, M, B in phases:
            if not t_to > t_from:
                raise DomainError("every phase needs positive duration")
            if not (math.isfinite(M) and math.isfinite(B) and M >= 0 and B >= 0):
                raise DomainError("phase impacts must be finite and non-negative")
        for (_, prev_to, _, _), (next_from, _, _, _) in zip(phases, phases[1:]):
            if abs(prev_to - next_from) > _TIME_EPS * scale:
                raise DomainError("phases must tile the window without gaps")
        slack = _TIME_EPS * scale
        if abs(self.t1 - phases[0][0]) > slack:
            raise DomainError("t1 must coincide with the first phase start")
        if not (
            self.t1 - slack <= self.t_star <= self.t2 + slack
            and self.t2 <= phases[-1][1] + slack
        ):
            raise DomainError("need t1 <= t_star <= t2 <= end")
        if not (math.isfinite(self.rmse) and self.rmse >= 0):
            raise DomainError("rmse must be finite and non-negative")

    @property
    def end(self) -> float:
        return self.phases[-1][1]

    def profile(self) -> ImpactProfile:
        knots = [self.phases[0][0]] + [p[1] for p in self.phases]
        pairs = [(p[2], p[3]) for p in self.phases]
        return ImpactProfile.piecewise_constant(knots, pairs)


def detect_switch_time(curve: TimeSeries) -> Tuple[float, float]:
    """Midpoint of the near-minimum band and the minimum value itself.

    The band collects the maximal contiguous run of samples around the
    global minimum lying within a flatness tolerance (1% of the value
    range) of it; a band touching either end means the curve never turns
    back up (or never declined), which is not a fittable two-phase shape.
    """
    v = curve.values
    k = int(np.argmin(v))
    if k == 0 or k == curve.n - 1:
        raise NoRecoveryError("curve minimum sits at the boundary; no trend reversal")
    band = v[k] + _FLATNESS_FRACTION * (float(np.max(v)) - v[k])
    lo = k
    while lo > 0 and v[lo - 1] <= band:
        lo -= 1
    hi = k
    while hi < curve.n - 1 and v[hi + 1] <= band:
        hi += 1
    if lo == 0 or hi == curve.n - 1:
        raise NoRecoveryError("near-minimum band reaches the curve boundary")
    times = curve.times()
    return 0.5 * (float(times[lo]) + float(times[hi])), float(v[k])


def _bisect_root(f, lo: float, hi: float, iterations: int = 100) -> float:
    """Plain bisection on [lo, hi]; the caller guarantees a sign change."""
    f_lo = f(lo)
    if f_lo == 0.0:
        return lo
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        f_mid = f(mid)
        if f_mid == 0.0:
            return mid
        if (f_lo > 0) == (f_mid > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    return 0.5 * (lo + hi)


def fast_fit_phase1(
    F0: float,
    F_N: float,
    m: float,
    t_star: float,
    hyper: FastFitHyperparams = DEFAULT_HYPER,
) -> PhaseEstimate:
    """Declining-phase estimate from the minimum value and switching time.

    The asymptote is pinned at alpha * m (the curve is assumed to have
    covered an alpha fraction of its approach by t_star), which reduces the
    two-equation system to a single bisection for the total impact Q1.
    """
    _check_levels(F0, F_N, m)
    if not (math.isfinite(t_star) and t_star > 0):
        raise DomainError(f"t_star must be positive, got {t_star!r}")
    if m >= F0:
        return PhaseEstimate(0.0, 0.0, True)
    r = hyper.alpha * m / F_N

    def g(Q: float) -> float:
        return (F0 - F_N * r) * math.exp(-Q * t_star) + F_N * r - m

    if g(Q_MAX) > 0.0:
        raise FitInfeasibleError(
            f"decline to m={m!r} unreachable within Q <= {Q_MAX}; "
            "no sign change in the bisection bracket"
        )
    Q1 = _bisect_root(g, 0.0, Q_MAX)
    return PhaseEstimate(Q1 * (1.0 - r), Q1 * r, False)


def fast_fit_phase2(
    F0: float,
    F_N: float,
    m: float,
    t_star: float,
    T: float,
    hyper: FastFitHyperparams = DEFAULT_HYPER,
) -> PhaseEstimate:
    """Recovering-phase estimate from the minimum and the run end T.

    The recovery asymptote is pinned at zeta of initial functionality and
    the curve is required to have covered an alpha_tilde fraction of the
    climb by T, leaving one bisection for Q2.  A target already met at
    arbitrarily small Q saturates at Q_MAX instead of failing.
    """
    _check_levels(F0, F_N, m)
    if m >= F_N:
        raise DomainError(f"minimum {m!r} must lie below full functionality {F_N!r}")
    if not T > t_star:
        raise DomainError(f"run end {T!r} must exceed t_star {t_star!r}")
    r2 = min(hyper.zeta / F0, 1.0)
    asymptote = F_N * r2
    target = hyper.alpha_tilde * hyper.zeta
    delta = T - t_star

    def h(Q: float) -> float:
        return (m - asymptote) * math.exp(-Q * delta) + asymptote - target

    h_lo, h_hi = h(0.0), h(Q_MAX)
    if h_lo > 0.0 and h_hi > 0.0:
        Q2 = Q_MAX
    elif h_lo < 0.0 and h_hi < 0.0:
        raise FitInfeasibleError(
            f"recovery target {target!r} exceeds the reachable asymptote "
            f"{asymptote!r}; no sign change in the bisection bracket"
        )
    else:
        Q2 = _bisect_root(h, 0.0, Q_MAX)
    return PhaseEstimate(Q2 * (1.0 - r2), Q2 * r2, False)


def _check_levels(F0: float, F_N: float, m: float):
    if not (math.isfinite(F0) and math.isfinite(F_N) and math.isfinite(m)):
        raise DomainError("levels must be finite")
    if not 0.0 < F0 <= F_N:
        raise DomainError(f"need 0 < F0 <= F_N, got F0={F0!r}, F_N={F_N!r}")
    if m <= 0.0:
        raise DomainError(f"minimum must be positive, got {m!r}")


def detect_attack_window(
    curve: TimeSeries,
    threshold: float = 0.02,
    hyper: FastFitHyperparams = DEFAULT_HYPER,
) -> Tuple[float, float]:
    """Decline onset t1 and recovery onset t2 of a normalized curve.

    t1 is the first time the curve drops below (1 - threshold) and stays
    there for at least min_window seconds; t2 is the last time the curve
    still sits within a threshold-scaled band above its minimum, the band
    ceiling being the end-of-run plateau estimate.  On noisy curves the
    band is widened to a multiple of the pre-decline spread so t2 tracks
    the recovery onset rather than the last noise excursion.
    """
    if not (math.isfinite(threshold) and 0.0 < threshold < 1.0):
        raise DomainError(f"threshold must lie in (0, 1), got {threshold!r}")
    v = curve.values
    w = max(1, min(curve.n, int(round(hyper.min_window / curve.dt))))
    below = (v < 1.0 - threshold).astype(np.int64)
    sustained = np.convolve(below, np.ones(w, dtype=np.int64), mode="valid") == w
    hits = np.nonzero(sustained)[0]
    if hits.size == 0:
        raise NoAttackDetectedError(
            f"curve never stays below {1.0 - threshold!r} for "
            f"{hyper.min_window!r} s"
        )
    times = curve.times()
    t1 = float(times[hits[0]])
    m = float(np.min(v))
    plateau = float(np.median(v[-w:]))
    width = threshold * (plateau - m)
    # The band is only meaningful when it is wider than the measurement
    # noise, otherwise t2 collapses onto the last stray dip instead of the
    # recovery onset.  The pre-decline stretch is the one segment guaranteed
    # to sit at the clean reference level, so its spread estimates the noise
    # floor.  The inflation is capped at half the dip depth so the band can
    # never swallow the recovery itself.
    pre = v[times < t1]
    if pre.size >= _T2_NOISE_MIN_SAMPLES:
        noise = _T2_NOISE_MULT * float(np.std(pre))
        width = max(width, min(noise, 0.5 * (plateau - m)))
    band = m + width
    k2 = int(np.nonzero(v <= band)[0][-1])
    t2 = float(times[k2])
    if t2 < t1:
        raise NoAttackDetectedError(
            "recovery onset precedes decline onset; curve shape is not an "
            "attack-and-recover pattern"
        )
    return t1, t2


# ---------------------------------------------------------------------------
# Full-curve fit and refinement
# ---------------------------------------------------------------------------


def _clip_params(x: np.ndarray, ts_lo: float, ts_hi: float) -> np.ndarray:
    out = x.copy()
    out[:4] = np.maximum(out[:4], 0.0)
    out[4] = min(max(out[4], ts_lo), ts_hi)
    return out


def _anchor_level(curve: TimeSeries, t1: float) -> float:
    """Observed functionality at the decline onset, clamped into (0, 1].

    The constant-phase family is memoryless, so restarting the model clock
    at t1 with the value observed there represents the same underlying
    curve; pretending the level is still exactly 1 would instead bias the
    declining phase's parameters.
    """
    k = int(round((t1 - curve.t0) / curve.dt))
    k = min(max(k, 0), curve.n - 1)
    return float(min(max(curve.values[k], 1e-6), 1.0))


def _fit_curve_values(
    times: np.ndarray, t1: float, t_end: float, f0: float, x: np.ndarray
) -> np.ndarray:
    ts = min(max(float(x[4]), t1 + 1e-6), t_end - 1e-6)
    profile = ImpactProfile.piecewise_constant(
        [t1, ts, t_end], [(float(x[0]), float(x[1])), (float(x[2]), float(x[3]))]
    )
    state = ModelState(F_N=1.0, F0=f0, t0=t1)
    return eval_piecewise_constant(state, profile, times)


def _window_rmse(curve: TimeSeries, t1: float, f0: float, x: np.ndarray) -> float:
    times = curve.times()
    sel = times >= t1 - _TIME_EPS
    res = _fit_curve_values(times[sel], t1, curve.t_end, f0, x) - curve.values[sel]
    return float(np.sqrt(np.mean(res * res)))


def _candidate_seed(
    times: np.ndarray,
    data: np.ndarray,
    t1: float,
    f0: float,
    c: float,
    dt: float,
) -> Optional[np.ndarray]:
    """Data-driven five-parameter start for a trial switching time c.

    Levels come straight from the samples around c (settled level just
    before it, plateau at the window end) and rates from the observed
    halfway-crossing times, so the start lands in the right basin even for
    curves that sit at an equilibrium before recovering, where the
    fast-fit asymptote assumptions do not hold.
    """
    kc = int(np.searchsorted(times, c))
    if kc < 2 or kc > times.size - 2:
        return None
    eq = float(np.median(data[max(0, kc - 8) : kc]))
    tail = data[kc:]
    p = float(np.median(tail[-min(8, tail.size) :]))
    eq_s = min(max(eq, 0.0), 1.0)
    p_s = min(max(p, 0.0), 1.0)
    half_down = np.nonzero(data[:kc] <= f0 - 0.5 * (f0 - eq))[0]
    t_down = float(times[half_down[0]]) if half_down.size else float(times[kc - 1])
    q1 = math.log(2.0) / max(t_down - t1, dt)
    half_up = np.nonzero(tail >= eq + 0.5 * (p - eq))[0]
    t_up = float(times[kc + half_up[0]]) if half_up.size else float(times[-1])
    q2 = math.log(2.0) / max(t_up - c, dt)
    return np.array(
        [q1 * (1.0 - eq_s), q1 * eq_s, q2 * (1.0 - p_s), q2 * p_s, c]
    )


def refine_least_squares(
    curve: TimeSeries,
    initial: PiecewiseConstantFit,
    tol: Optional[Tolerance] = None,
) -> PiecewiseConstantFit:
    """Damped Gauss-Newton polish of (M1, B1, M2, B2, t_star).

    Impacts stay non-negative and the switching time stays inside
    [t1, t2]. Steps are only ever accepted when they lower the rmse, so the
    result's rmse never exceeds the initial fit's; if nothing improves, the
    initial fit is returned unchanged and flagged unrefined.
    """
    tol = tol or Tolerance()
    if len(initial.phases) != 2:
        return replace(initial, refined=False)
    t1, t_end = initial.t1, initial.end
    f0 = _anchor_level(curve, t1)
    ts_lo = t1 + max(curve.dt * 0.5, 1e-6)
    ts_hi = max(min(initial.t2, t_end - max(curve.dt * 0.5, 1e-6)), ts_lo)
    times_all = curve.times()
    sel = times_all >= t1 - _TIME_EPS
    times = times_all[sel]
    data = curve.values[sel]
    if times.size < 8:
        return replace(initial, refined=False)

    def residuals(x: np.ndarray) -> np.ndarray:
        return _fit_curve_values(times, t1, t_end, f0, x) - data

    def rms(res: np.ndarray) -> float:
        return float(np.sqrt(np.mean(res * res)))

    x0 = np.array(
        [
            initial.phases[0][2],
            initial.phases[0][3],
            initial.phases[1][2],
            initial.phases[1][3],
            initial.t_star,
        ]
    )
    x0 = _clip_params(x0, ts_lo, ts_hi)

    def gauss_newton(x: np.ndarray) -> Tuple[np.ndarray, float]:
        x = x.copy()
        res = residuals(x)
        best = rms(res)
        lam = 1e-3
        for _ in range(tol.max_iter):
            jac = np.empty((times.size, 5))
            for j in range(5):
                h = max(1e-7, 1e-7 * abs(x[j])) if j < 4 else max(1e-4, 0.05 * curve.dt)
                xp = x.copy()
                xp[j] += h
                xp = _clip_params(xp, ts_lo, ts_hi)
                dh = xp[j] - x[j]
                if dh == 0.0:
                    xp[j] = x[j] - h
                    xp = _clip_params(xp, ts_lo, ts_hi)
                    dh = xp[j] - x[j]
                jac[:, j] = (residuals(xp) - res) / dh if dh != 0.0 else 0.0
            jtj = jac.T @ jac
            jtr = jac.T @ res
            improved = False
            for _ in range(12):
                try:
                    step = np.linalg.solve(jtj + lam * np.eye(5), -jtr)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                cand = _clip_params(x + step, ts_lo, ts_hi)
                cand_res = residuals(cand)
                cand_rms = rms(cand_res)
                if cand_rms < best:
                    gain = best - cand_rms
                    x, res, best = cand, cand_res, cand_rms
                    lam = max(lam * 0.3, 1e-12)
                    improved = True
                    if gain <= tol.abs_tol + tol.rel_tol * best:
                        return x, best
                    break
                lam *= 10.0
                if lam > 1e10:
                    return x, best
            if not improved:
                return x, best
        return x, best

    try:
        x_best, rms_best = gauss_newton(x0)
        # A poor residual after polishing usually means the switching time
        # was detected at the middle of a flat valley while the true phase
        # change happens at its edge; a coarse scan escapes that plateau.
        if rms_best > 0.01 and ts_hi > ts_lo:
            candidates = np.linspace(ts_lo, ts_hi, 17)
            scored = []
            for c in candidates:
                xc = x_best.copy()
                xc[4] = c
                scored.append((rms(residuals(xc)), tuple(xc)))
                seed = _candidate_seed(times, data, t1, f0, float(c), curve.dt)
                if seed is not None:
                    seed = _clip_params(seed, ts_lo, ts_hi)
                    scored.append((rms(residuals(seed)), tuple(seed)))
            scored.sort(key=lambda item: item[0])
            for _, start in scored[:3]:
                x_alt, rms_alt = gauss_newton(np.array(start))
                if rms_alt < rms_best:
                    x_best, rms_best = x_alt, rms_alt
    except (np.linalg.LinAlgError, FloatingPointError, DomainError):
        return replace(initial, refined=False)

    if not rms_best < initial.rmse:
        return replace(initial, refined=False)
    ts = min(max(float(x_best[4]), ts_lo), ts_hi)
    return PiecewiseConstantFit(
        t_star=ts,
        m=initial.m,
        phases=(
            (t1, ts, float(x_best[0]), float(x_best[1])),
            (ts, t_end, float(x_best[2]), float(x_best[3])),
        ),
        t1=t1,
        t2=initial.t2,
        rmse=rms_best,
        refined=True,
    )


def model_curve(curve: TimeSeries, fit: PiecewiseConstantFit) -> TimeSeries:
    """Fitted model sampled on the curve's grid, 1.0 ahead of the window.

    The model clock starts at the fit's decline onset with the level
    actually observed there, matching how the fit was produced, so the
    returned series is directly comparable with the input curve.
    """
    times = curve.times()
    values = np.ones(curve.n)
    sel = times >= fit.t1 - _TIME_EPS
    state = ModelState(F_N=1.0, F0=_anchor_level(curve, fit.t1), t0=fit.t1)
    values[sel] = eval_piecewise_constant(state, fit.profile(), times[sel])
    return TimeSeries(curve.t0, curve.dt, values)


def fit_ratio_curve(
    curve: TimeSeries,
    threshold: float = 0.02,
    hyper: FastFitHyperparams = DEFAULT_HYPER,
    refine: bool = False,
    tol: Optional[Tolerance] = None,
) -> PiecewiseConstantFit:
    """Full extraction chain on a normalized ratio curve.

    Detects the attack window and switching time, runs both fast phase
    fits with the clock started at the decline onset, assembles the
    two-phase description, and optionally polishes it.
    """
    t1, t2 = detect_attack_window(curve, threshold, hyper)
    t_star, m = detect_switch_time(curve)
    t_end = curve.t_end
    t_star = min(max(t_star, t1 + curve.dt), t_end - curve.dt)
    f0 = _anchor_level(curve, t1)
    phase1 = fast_fit_phase1(f0, 1.0, m, t_star - t1, hyper)
    if phase1.degenerate:
        x = np.array([0.0, 0.0, 0.0, 0.0, t_star])
        fit = PiecewiseConstantFit(
            t_star=t_star,
            m=m,
            phases=((t1, t_star, 0.0, 0.0), (t_star, t_end, 0.0, 0.0)),
            t1=t1,
            t2=t2,
            rmse=_window_rmse(curve, t1, f0, x),
            refined=False,
        )
        return fit
    phase2 = fast_fit_phase2(f0, 1.0, m, t_star - t1, t_end - t1, hyper)
    x = np.array([phase1.M, phase1.B, phase2.M, phase2.B, t_star])
    fit = PiecewiseConstantFit(
        t_star=t_star,
        m=m,
        phases=(
            (t1, t_star, phase1.M, phase1.B),
            (t_star, t_end, phase2.M, phase2.B),
        ),
        t1=t1,
        t2=t2,
        rmse=_window_rmse(curve, t1, f0, x),
        refined=False,
    )
    if refine:
        fit = refine_least_squares(curve, fit, tol)
    return fit
