"""Retention curves and the two decay models.

exponential:    P(t) = A exp(-x0 t), fitted from day 2 on
time-dependent: P(t) = exp(-x_a t^(1-a) / (1-a)), fitted from day 1 on

Both are fitted by weighted least squares on log P(t) with the eligible
(uncensored) user counts as weights.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import curve_fit, minimize

from .core import ActivityLog, AppEvents

log = logging.getLogger(__name__)

A_GRID = np.round(np.arange(0.0, 0.951, 0.05), 10)
A_MAX = 0.99
MIN_ELIGIBLE = 30
MIN_POINTS = 5


@dataclass(frozen=True)
class RetentionCurve:
    n0: int
    N: np.ndarray  # users active t days after their first login
    eligible: np.ndarray  # users whose first login is >= t days before the end of the log
    P: np.ndarray

    @property
    def max_offset(self) -> int:
        return len(self.N) - 1


@dataclass(frozen=True)
class RetentionFit:
    model: str  # "exponential" | "timedep"
    A: float = math.nan
    x0: float = math.nan
    a: float = math.nan
    x_a: float = math.nan
    rmse: float = math.nan
    fit_range: tuple = (0, 0)
    converged: bool = True
    fallback: bool = False  # exponential fitted on P directly because of zero counts


def retention_from_events(ev: AppEvents, horizon: int, max_offset: int) -> RetentionCurve:
    if max_offset >= horizon:
        raise ValueError(f"max_offset {max_offset} exceeds horizon {horizon}")
    users, first = ev.first_days()
    n0 = len(users)
    # first-login day of each event's user
    pos = np.searchsorted(users, ev.users)
    off = ev.days - first[pos]
    N = np.bincount(off[off <= max_offset], minlength=max_offset + 1)[: max_offset + 1]
    last = horizon - 1
    slack = np.sort(last - first)  # offsets observable for each user
    t = np.arange(max_offset + 1)
    eligible = len(slack) - np.searchsorted(slack, t, side="left")
    with np.errstate(invalid="ignore", divide="ignore"):
        P = np.where(eligible > 0, N / np.maximum(eligible, 1), np.nan)
    return RetentionCurve(n0, N.astype(np.int64), eligible.astype(np.int64), P)


def compute_retention(log_: ActivityLog, app, max_offset: int = 30) -> RetentionCurve:
    return retention_from_events(log_.events(app), log_.horizon, max_offset)


def curve_from_probabilities(P, eligible=10_000) -> RetentionCurve:
    """Noise-free curve from exact probabilities (for analytic inputs and tests)."""
    P = np.asarray(P, dtype=float)
    elig = np.broadcast_to(np.asarray(eligible, dtype=np.int64), P.shape).copy()
    N = np.round(P * elig).astype(np.int64)
    return RetentionCurve(int(elig[0]), N, elig, P)


def _fit_points(curve: RetentionCurve, t_min: int):
    t = np.arange(curve.max_offset + 1)
    ok = (t >= t_min) & (curve.eligible >= 1) & np.isfinite(curve.P)
    return t[ok].astype(float), curve.P[ok], curve.eligible[ok].astype(float)


def _check_curve(curve: RetentionCurve):
    if int((curve.eligible >= MIN_ELIGIBLE).sum()) < MIN_POINTS:
        raise ValueError(f"curve needs >= {MIN_POINTS} offsets with >= {MIN_ELIGIBLE} eligible users")


def _wrmse(resid, w) -> float:
    return float(np.sqrt(np.sum(w * resid**2) / np.sum(w)))


def fit_exponential(curve: RetentionCurve, t_min: int = 2) -> RetentionFit:
    """log P = log A - x0 t by weighted linear regression over t >= t_min."""
    _check_curve(curve)
    t, P, w = _fit_points(curve, t_min)
    rng = (t_min, curve.max_offset)
    if np.all(P > 0):
        y = np.log(P)
        X = np.column_stack([np.ones_like(t), -t])
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
        A, x0 = math.exp(coef[0]), float(coef[1])
        rmse = _wrmse(y - X @ coef, w)
        return RetentionFit("exponential", A=A, x0=x0, rmse=rmse, fit_range=rng)

    # zero counts: log is undefined, fit the curve itself
    def model(tt, A, x0):
        return A * np.exp(-x0 * tt)

    pos = P > 0
    p0 = (max(P[0], 1e-6), 0.1)
    if pos.sum() >= 2:
        c = np.polyfit(t[pos], np.log(P[pos]), 1)
        p0 = (math.exp(c[1]), max(-c[0], 1e-6))
    try:
        (A, x0), _ = curve_fit(model, t, P, p0=p0, sigma=1 / np.sqrt(w), maxfev=10_000)
        converged = True
    except RuntimeError:
        (A, x0), converged = p0, False
    resid = P - model(t, A, x0)
    return RetentionFit("exponential", A=float(A), x0=float(x0), rmse=_wrmse(resid, w),
                        fit_range=rng, converged=converged, fallback=True)


def _timedep_basis(t, a):
    return t ** (1 - a) / (1 - a)


def _best_rate(t, y, w, a):
    """Closed-form rate for fixed a: minimise sum w (y + x f)^2."""
    f = _timedep_basis(t, a)
    x = -np.sum(w * y * f) / np.sum(w * f * f)
    return x, _wrmse(y + x * f, w)


def fit_timedep(curve: RetentionCurve, fix_a: float | None = None, t_min: int = 1) -> RetentionFit:
    """Grid over a with the optimal rate at each grid point, then Nelder-Mead on (a, x_a).

    Offsets with P(t) = 0 carry no log-space information and are skipped.
    ``fix_a`` pins a (0 gives the amplitude-free exponential).
    """
    _check_curve(curve)
    t, P, w = _fit_points(curve, t_min)
    pos = P > 0
    t, y, w = t[pos], np.log(P[pos]), w[pos]
    rng = (t_min, curve.max_offset)
    if len(t) < 2:
        return RetentionFit("timedep", a=math.nan, x_a=math.nan, fit_range=rng, converged=False)
    if fix_a is not None:
        x, err = _best_rate(t, y, w, fix_a)
        return RetentionFit("timedep", a=float(fix_a), x_a=float(x), rmse=err, fit_range=rng)

    grid = [(_best_rate(t, y, w, a), a) for a in A_GRID]
    (x_g, err_g), a_g = min(grid, key=lambda g: (g[0][1], g[1]))

    def objective(p):
        a, x = p
        if not 0 <= a <= A_MAX:
            return 1e300
        return _wrmse(y + x * _timedep_basis(t, a), w)

    scale = max(abs(x_g), 1e-6)
    start = np.array([a_g, x_g])
    simplex = np.array([start, start + [0.02 if a_g < 0.9 else -0.02, 0.0], start + [0.0, 0.05 * scale]])
    res = minimize(objective, start, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-12, "fatol": 1e-15,
                            "maxiter": 4000, "maxfev": 8000})
    a_r, x_r = res.x
    err_r = objective(res.x)
    if err_r <= err_g:
        converged = bool(res.success)
        a_f, x_f, err = float(a_r), float(x_r), float(err_r)
    else:
        converged = False
        a_f, x_f, err = float(a_g), float(x_g), float(err_g)
    return RetentionFit("timedep", a=a_f, x_a=x_f, rmse=err, fit_range=rng, converged=converged)


def predict_retention(fit: RetentionFit, t) -> np.ndarray | float:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    if fit.model == "exponential":
        val = fit.A * np.exp(-fit.x0 * t_arr)
    else:
        val = np.exp(-fit.x_a * _timedep_basis(t_arr, fit.a))
    val = np.clip(val, 0.0, 1.0)
    return float(val) if np.ndim(val) == 0 else val


def fits_to_csv(rows) -> str:
    """``rows``: iterable of (app_id, RetentionFit)."""
    def f(v):
        return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

    buf = io.StringIO()
    buf.write("app_id,model,A,x0,a,x_a,rmse,converged\n")
    for app, fit in rows:
        buf.write(f"{app},{fit.model},{f(fit.A)},{f(fit.x0)},{f(fit.a)},{f(fit.x_a)},"
                  f"{f(fit.rmse)},{int(fit.converged)}\n")
    return buf.getvalue()
