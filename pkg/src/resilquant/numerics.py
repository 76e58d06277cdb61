"""Self-contained numerical kernel.

Everything downstream (model evaluation, metrics, fitting) builds on the
small set of primitives here: a uniform-grid time series carrier, an error
function, a fixed-step RK4 integrator used as the independent oracle for
the closed forms, trapezoidal integration with interpolated endpoints, a
running median with time-symmetric shrinking windows, and a damped-Newton
solver for small nonlinear systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    ConvergenceError,
    DomainError,
    IntegrationError,
    RangeError,
)

__all__ = [
    "TimeSeries",
    "Tolerance",
    "erf",
    "erfcx",
    "integrate_ode_rk4",
    "trapezoid",
    "running_median",
    "solve_2x2_nonlinear",
]

# Relative slack used when snapping times onto a sample grid.
_GRID_EPS = 1e-9


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled real-valued signal.

    Sample k sits at time ``t0 + k * dt``.  The values array is coerced to a
    1-D float64 array on construction and must hold at least two samples.
    """

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError("TimeSeries values must be one-dimensional")
        if vals.size < 2:
            raise ValueError("TimeSeries needs at least two samples")
        if not (math.isfinite(self.t0) and math.isfinite(self.dt)):
            raise ValueError("TimeSeries t0 and dt must be finite")
        if not self.dt > 0:
            raise ValueError("TimeSeries dt must be positive")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def t_end(self) -> float:
        return self.t0 + (self.n - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    def value_at(self, t: float) -> float:
        """Linear interpolation at time t, which must lie within the span."""
        pos = self._position(t)
        k = min(int(pos), self.n - 2)
        frac = pos - k
        v = self.values
        return float(v[k] + frac * (v[k + 1] - v[k]))

    def _position(self, t: float) -> float:
        """Fractional grid index of time t; raises RangeError outside span."""
        pos = (t - self.t0) / self.dt
        if pos < -_GRID_EPS or pos > (self.n - 1) + _GRID_EPS:
            raise RangeError(
                f"time {t!r} outside series span [{self.t0!r}, {self.t_end!r}]"
            )
        return min(max(pos, 0.0), float(self.n - 1))


@dataclass(frozen=True)
class Tolerance:
    """Stopping control for iterative solvers."""

    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_iter: int = 60

    def __post_init__(self):
        if self.abs_tol < 0 or self.rel_tol < 0:
            raise ValueError("tolerances must be non-negative")
        if self.abs_tol == 0 and self.rel_tol == 0:
            raise ValueError("at least one of abs_tol/rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


def erf(z: float) -> float:
    """Gauss error function (2/sqrt(pi)) * integral of exp(-tau^2) from 0 to z.

    Delegates to the C library implementation, which is a published rational
    approximation accurate to well under 1e-12 over the range used here.
    """
    if not math.isfinite(z):
        raise DomainError(f"erf requires a finite argument, got {z!r}")
    return math.erf(z)


# Double-factorial coefficients (2n-1)!! for the erfcx asymptotic tail.
_ERFCX_ASYMPTOTIC = (1.0, 3.0, 15.0, 105.0, 945.0, 10395.0, 135135.0)


def erfcx(x: float) -> float:
    """Scaled complementary error function exp(x^2) * erfc(x) for x >= 0.

    Direct evaluation of the product underflows/overflows past x ~ 26, so the
    tail switches to the standard asymptotic series 1/(x sqrt(pi)) *
    (1 - 1/(2x^2) + 3/(2x^2)^2 - ...), accurate to ~1e-15 there.
    """
    if not math.isfinite(x) or x < 0:
        raise DomainError(f"erfcx requires a finite x >= 0, got {x!r}")
    if x < 25.0:
        return math.exp(x * x) * math.erfc(x)
    inv2x2 = 1.0 / (2.0 * x * x)
    term = 1.0
    total = 1.0
    for coeff in _ERFCX_ASYMPTOTIC:
        term *= -inv2x2
        total += coeff * term
    return total / (x * math.sqrt(math.pi))


def integrate_ode_rk4(
    f: Callable[[float, float], float],
    F0: float,
    t0: float,
    t_end: float,
    step: float,
) -> TimeSeries:
    """Integrate dF/dt = f(t, F) with classic fixed-step 4th-order Runge-Kutta.

    The returned series starts at (t0, F0) and ends exactly at t_end.  When
    the span is not an integral multiple of ``step`` the step is shrunk
    uniformly so every sample still sits on one grid; the effective step
    never exceeds the request, so the error bound of the requested step
    holds.

    Raises IntegrationError if the derivative or state turns non-finite,
    naming the offending time.
    """
    if not (math.isfinite(t0) and math.isfinite(t_end) and math.isfinite(F0)):
        raise DomainError("integrate_ode_rk4 requires finite t0, t_end, F0")
    if not (math.isfinite(step) and step > 0):
        raise DomainError(f"step must be positive and finite, got {step!r}")
    span = t_end - t0
    if span <= 0:
        raise DomainError("t_end must exceed t0")

    n = max(1, int(math.ceil(span / step - _GRID_EPS)))
    h = span / n
    out = np.empty(n + 1, dtype=float)
    out[0] = F0
    y = F0
    half = 0.5 * h
    sixth = h / 6.0
    for k in range(n):
        t = t0 + k * h
        k1 = f(t, y)
        k2 = f(t + half, y + half * k1)
        k3 = f(t + half, y + half * k2)
        k4 = f(t + h, y + h * k3)
        if not (
            math.isfinite(k1)
            and math.isfinite(k2)
            and math.isfinite(k3)
            and math.isfinite(k4)
        ):
            raise IntegrationError(f"non-finite derivative near t = {t!r}")
        y = y + sixth * (k1 + 2.0 * (k2 + k3) + k4)
        if not math.isfinite(y):
            raise IntegrationError(f"state became non-finite at t = {t + h!r}")
        out[k + 1] = y
    return TimeSeries(t0=t0, dt=h, values=out)


def trapezoid(series: TimeSeries, t_from: float, t_to: float) -> float:
    """Trapezoidal integral of the series between two times within its span.

    Off-grid endpoints are handled by linear interpolation, so splitting an
    integral at any grid-aligned point is additive to rounding error.
    """
    if not (math.isfinite(t_from) and math.isfinite(t_to)):
        raise DomainError("integration bounds must be finite")
    if t_to < t_from:
        raise RangeError(f"t_to {t_to!r} precedes t_from {t_from!r}")
    pos_a = series._position(t_from)
    pos_b = series._position(t_to)
    if pos_a == pos_b:
        return 0.0

    v = series.values
    dt = series.dt
    ka = int(math.ceil(pos_a - _GRID_EPS))
    kb = int(math.floor(pos_b + _GRID_EPS))
    ka = min(max(ka, 0), series.n - 1)
    kb = min(max(kb, 0), series.n - 1)

    def interp(pos: float) -> float:
        k = min(int(pos), series.n - 2)
        frac = pos - k
        return float(v[k] + frac * (v[k + 1] - v[k]))

    if ka > kb:
        # Both endpoints inside one grid cell.
        return 0.5 * (interp(pos_a) + interp(pos_b)) * (pos_b - pos_a) * dt

    seg = v[ka : kb + 1]
    if seg.size >= 2:
        area = dt * (0.5 * seg[0] + float(seg[1:-1].sum()) + 0.5 * seg[-1])
    else:
        area = 0.0

    left_gap = (ka - pos_a) * dt
    if left_gap > _GRID_EPS * dt:
        area += 0.5 * (interp(pos_a) + float(v[ka])) * left_gap
    right_gap = (pos_b - kb) * dt
    if right_gap > _GRID_EPS * dt:
        area += 0.5 * (float(v[kb]) + interp(pos_b)) * right_gap
    return area


def running_median(series: TimeSeries, window_s: float) -> TimeSeries:
    """Running median over a time window of width ``window_s``.

    Sample j participates in the window at sample k when |j - k| * dt is at
    most window_s / 2.  Near the edges the window shrinks symmetrically in
    available samples rather than padding; windows with an even count take
    the mean of the two central order statistics (the numpy convention).
    """
    if not (math.isfinite(window_s) and window_s > 0):
        raise DomainError(f"window must be positive and finite, got {window_s!r}")
    v = series.values
    n = series.n
    half = int(math.floor(window_s / (2.0 * series.dt) + _GRID_EPS))
    if half == 0:
        return TimeSeries(series.t0, series.dt, v.copy())

    out = np.empty(n, dtype=float)
    width = 2 * half + 1
    if n >= width:
        out[half : n - half] = np.median(sliding_window_view(v, width), axis=1)
        edges = list(range(half)) + list(range(n - half, n))
    else:
        edges = list(range(n))  # no full window fits; every sample is an edge
    for k in edges:
        lo = max(k - half, 0)
        hi = min(k + half + 1, n)
        out[k] = np.median(v[lo:hi])
    return TimeSeries(series.t0, series.dt, out)


def _newton_2x2(
    residual: Callable[[float, float], Tuple[float, float]],
    x1: float,
    x2: float,
    tol: Tolerance,
):
    """Damped Newton iteration; returns (x1, x2, converged, best, best_norm)."""

    def norm(r):
        return max(abs(r[0]), abs(r[1]))

    r = residual(x1, x2)
    best = (x1, x2)
    best_norm = norm(r)
    for _ in range(tol.max_iter):
        if best_norm <= tol.abs_tol:
            return best[0], best[1], True, best, best_norm
        x1, x2 = best
        r = residual(x1, x2)
        # Forward-difference Jacobian with scale-aware steps.
        h1 = math.sqrt(2.2e-16) * max(1.0, abs(x1))
        h2 = math.sqrt(2.2e-16) * max(1.0, abs(x2))
        r1p = residual(x1 + h1, x2)
        r2p = residual(x1, x2 + h2)
        j11 = (r1p[0] - r[0]) / h1
        j21 = (r1p[1] - r[1]) / h1
        j12 = (r2p[0] - r[0]) / h2
        j22 = (r2p[1] - r[1]) / h2
        det = j11 * j22 - j12 * j21
        if det == 0 or not math.isfinite(det):
            break
        dx1 = -(r[0] * j22 - r[1] * j12) / det
        dx2 = -(j11 * r[1] - j21 * r[0]) / det
        # Backtrack until the residual norm improves.
        lam = 1.0
        improved = False
        for _ in range(40):
            c1, c2 = x1 + lam * dx1, x2 + lam * dx2
            rc = residual(c1, c2)
            nc = norm(rc)
            if math.isfinite(nc) and nc < best_norm:
                best = (c1, c2)
                best_norm = nc
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    converged = best_norm <= tol.abs_tol
    return best[0], best[1], converged, best, best_norm


def _expand_bracket(g: Callable[[float], float], x0: float):
    """Search outward from x0 for a sign change of g; returns (lo, hi) or None."""
    g0 = g(x0)
    if not math.isfinite(g0):
        return None
    if g0 == 0.0:
        return (x0, x0)
    step = 1e-3 * max(1.0, abs(x0))
    for _ in range(60):
        for cand in (x0 - step, x0 + step):
            gc = g(cand)
            if math.isfinite(gc) and gc == 0.0:
                return (cand, cand)
            if math.isfinite(gc) and (gc < 0) != (g0 < 0):
                return (min(x0, cand), max(x0, cand)) if cand > x0 else (cand, x0)
        step *= 2.0
    return None


def _bisect(g: Callable[[float], float], lo: float, hi: float, iters: int = 100):
    glo = g(lo)
    if glo == 0.0:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        if not math.isfinite(gm):
            return None
        if gm == 0.0:
            return mid
        if (gm < 0) == (glo < 0):
            lo, glo = mid, gm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_2x2_nonlinear(
    residual: Callable[[float, float], Tuple[float, float]],
    initial: Tuple[float, float],
    tol: Tolerance = Tolerance(),
) -> Tuple[float, float]:
    """Solve residual(x1, x2) = (0, 0) near an initial guess.

    Strategy: damped Newton with a finite-difference Jacobian and
    backtracking line search; if Newton stalls, fall back to a nested
    bisection (solve the second component for x2 at fixed x1, then bisect
    the first component over x1).  Raises ConvergenceError carrying the
    best iterate and its max-norm residual when both strategies fail.
    """
    x1, x2, ok, best, best_norm = _newton_2x2(residual, initial[0], initial[1], tol)
    if ok:
        return x1, x2

    def inner(x1v: float):
        bracket = _expand_bracket(lambda y: residual(x1v, y)[1], best[1])
        if bracket is None:
            return None
        return _bisect(lambda y: residual(x1v, y)[1], bracket[0], bracket[1])

    def outer(x1v: float) -> float:
        x2v = inner(x1v)
        if x2v is None:
            return math.nan
        return residual(x1v, x2v)[0]

    bracket = _expand_bracket(outer, best[0])
    if bracket is not None:
        x1s = _bisect(outer, bracket[0], bracket[1])
        if x1s is not None:
            x2s = inner(x1s)
            if x2s is not None:
                r = residual(x1s, x2s)
                n = max(abs(r[0]), abs(r[1]))
                if n <= max(tol.abs_tol, tol.rel_tol * max(abs(x1s), abs(x2s), 1.0)):
                    return x1s, x2s
                if n < best_norm:
                    best, best_norm = (x1s, x2s), n
    raise ConvergenceError(
        f"2x2 solver stalled with residual max-norm {best_norm:.3e}",
        best=best,
        norm=best_norm,
    )
