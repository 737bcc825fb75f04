"""Mean-field SIRS dynamics of daily active users, Monte Carlo fitting and prediction.

Compartments: U unexposed susceptibles, A active users, I inactive users, with
U + A + I = S0.  One step is one day:

    r(t)   = min(1, alpha + beta A/S0)
    react  = min(I, epsilon I A / S0)
    U'     = U (1 - r)
    A'     = A + U r - gamma A + react
    I'     = I + gamma A - react
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

CONVERGENCE_FRACTION = 0.05
EPS_MAX = 10.0
S0_SPAN = 1000.0
_LOG_FLOOR = -9.0  # log10 parameter values below this count as zero during refinement
N_STARTS = 5  # best random draws used as simplex starting points
LOG_DRAW_FRACTION = 0.5
LOG_RATE_FLOOR = -4.0


class SirsInvariantError(RuntimeError):
    pass


@dataclass(frozen=True)
class SirsParams:
    S0: float
    alpha: float
    beta: float
    gamma: float
    epsilon: float

    def __post_init__(self):
        if self.S0 <= 0:
            raise ValueError("S0 must be > 0")
        if min(self.alpha, self.beta, self.gamma, self.epsilon) < 0:
            raise ValueError("rates must be >= 0")
        if self.gamma > 1:
            raise ValueError("gamma must be <= 1")

    def as_array(self):
        return np.array([self.S0, self.alpha, self.beta, self.gamma, self.epsilon])


@dataclass(frozen=True)
class SirsState:
    U: float
    A: float
    I: float


def _step(U, A, I, S0, alpha, beta, gamma, eps):
    r = np.minimum(1.0, alpha + beta * A / S0)
    react = np.minimum(I, eps * I * A / S0)
    new = U * r
    return U - new, A + new - gamma * A + react, I + gamma * A - react


def rollout(S0, alpha, beta, gamma, eps, A0, I0, steps: int):
    """Vectorised rollout over parameter arrays; returns (A trajectory (m, steps+1), final U, A, I)."""
    S0, alpha, beta, gamma, eps = (np.asarray(v, dtype=float) for v in (S0, alpha, beta, gamma, eps))
    A = np.broadcast_to(np.asarray(A0, dtype=float), S0.shape).copy()
    I = np.broadcast_to(np.asarray(I0, dtype=float), S0.shape).copy()
    U = S0 - A - I
    traj = np.empty(S0.shape + (steps + 1,))
    traj[..., 0] = A
    for t in range(steps):
        U, A, I = _step(U, A, I, S0, alpha, beta, gamma, eps)
        traj[..., t + 1] = A
    return traj, U, A, I


def simulate_states(params: SirsParams, horizon: int, A0: float, I0: float = 0.0):
    """(U, A, I) arrays of length ``horizon`` with the conservation and sign checks applied."""
    S0 = params.S0
    if A0 < 0 or I0 < 0 or A0 + I0 > S0:
        raise ValueError("need 0 <= A0, I0 and A0 + I0 <= S0")
    U, A, I = np.empty(horizon), np.empty(horizon), np.empty(horizon)
    u, a, i = S0 - A0 - I0, float(A0), float(I0)
    for t in range(horizon):
        U[t], A[t], I[t] = u, a, i
        if abs(u + a + i - S0) > 1e-6 * S0 or min(u, a, i) < -1e-9 * S0:
            raise SirsInvariantError(f"invariant violated at t={t}: U={u} A={a} I={i} S0={S0}")
        u, a, i = (float(x) for x in _step(u, a, i, S0, params.alpha, params.beta, params.gamma, params.epsilon))
    return U, A, I


def simulate_sirs(params: SirsParams, horizon: int, A0: float, I0: float = 0.0) -> np.ndarray:
    """Active users A(t) for t = 0..horizon-1."""
    return simulate_states(params, horizon, A0, I0)[1]


@dataclass
class SirsFit:
    params: SirsParams
    window: tuple  # (first, last) index of the fitted window, inclusive
    rmse: float
    converged: bool
    fitted: np.ndarray
    end_state: SirsState
    evaluations: int = 0


@dataclass
class SirsPrediction:
    values: np.ndarray
    low_confidence: bool = False
    start: int = 0  # index of the first predicted day
    extra: dict = field(default_factory=dict)


def _scalar_rmse(theta, A0, y):
    """Plain-float rollout; much faster than numpy for a single parameter vector."""
    S0, alpha, beta, gamma, eps = (float(v) for v in theta)
    A, I = A0, 0.0
    U = S0 - A
    sq = (A - y[0]) ** 2
    for obs in y[1:]:
        r = alpha + beta * A / S0
        if r > 1.0:
            r = 1.0
        react = eps * I * A / S0
        if react > I:
            react = I
        new = U * r
        U, A, I = U - new, A + new - gamma * A + react, I + gamma * A - react
        sq += (A - obs) ** 2
    return math.sqrt(sq / len(y))


def _bounds(peak, A0):
    lo_s0 = max(peak, A0, 1e-12)
    return np.array([math.log10(lo_s0), math.log10(lo_s0 * S0_SPAN)])


def fit_sirs(observed, window=None, budget: int = 20_000, seed=0, refine_evals: int | None = None) -> SirsFit:
    """Random search over the parameter box, then Nelder-Mead from the best few draws.

    S0 is log-uniform on [peak, 1000 peak]; each rate is drawn uniformly on its
    range for half the draws and log-uniformly for the other half.

    ``budget`` random draws are evaluated; refinement gets ``refine_evals``
    further evaluations (default budget // 4).
    """
    y_all = np.asarray(getattr(observed, "values", observed), dtype=float)
    lo, hi = (0, len(y_all) - 1) if window is None else window
    y = y_all[lo:hi + 1]
    if len(y) < 30:
        raise ValueError("fit window must span >= 30 days")
    if budget < 1000:
        raise ValueError("budget must be >= 1000")
    refine_evals = budget // 4 if refine_evals is None else refine_evals
    steps = len(y) - 1
    A0 = float(y[0])
    peak = float(y.max())

    if peak <= 0:
        params = SirsParams(1.0, 0.0, 0.0, 0.0, 0.0)
        return SirsFit(params, (lo, hi), 0.0, True, np.zeros(len(y)), SirsState(1.0, 0.0, 0.0), 0)

    rng = np.random.default_rng(seed)
    s0_lo, s0_hi = _bounds(peak, A0)
    pool_err, pool_theta = [], []
    chunk = 4096
    for start in range(0, budget, chunk):
        m = min(chunk, budget - start)
        S0 = 10 ** rng.uniform(s0_lo, s0_hi, m)
        alpha, beta, gamma = rng.uniform(0, 1, (3, m))
        eps = rng.uniform(0, EPS_MAX, m)
        # half the draws are log-uniform so small rates get sampled too
        logd = rng.random(m) < LOG_DRAW_FRACTION
        k = int(logd.sum())
        rates = 10 ** rng.uniform(LOG_RATE_FLOOR, 0, (4, k))
        alpha[logd], beta[logd], gamma[logd] = rates[:3]
        eps[logd] = rates[3] * EPS_MAX
        traj, *_ = rollout(S0, alpha, beta, gamma, eps, A0, 0.0, steps)
        err = np.sqrt(np.mean((traj - y) ** 2, axis=1))
        keep = np.argsort(err, kind="stable")[:N_STARTS]
        pool_err.append(err[keep])
        pool_theta.append(np.column_stack([S0, alpha, beta, gamma, eps])[keep])
    pool_err = np.concatenate(pool_err)
    pool_theta = np.concatenate(pool_theta)
    order = np.argsort(pool_err, kind="stable")[:N_STARTS]
    starts = pool_theta[order]
    best_err, best_theta = float(pool_err[order[0]]), starts[0].copy()

    def unpack(z):
        s0 = 10 ** np.clip(z[0], s0_lo, s0_hi)
        rates = np.where(z[1:] <= _LOG_FLOOR, 0.0, 10 ** np.minimum(z[1:], 0.0))
        rates[3] = 0.0 if z[4] <= _LOG_FLOOR else 10 ** min(z[4], math.log10(EPS_MAX))
        return np.r_[s0, rates]

    def objective(z):
        return _scalar_rmse(unpack(z), A0, y_list)

    y_list = y.tolist()
    evals = budget
    if refine_evals > 0:
        per_start = max(1, refine_evals // len(starts))
        for theta in starts:
            z0 = np.r_[math.log10(theta[0]), np.log10(np.maximum(theta[1:], 10**_LOG_FLOOR))]
            res = minimize(objective, z0, method="Nelder-Mead",
                           options={"maxfev": per_start, "xatol": 1e-8, "fatol": 1e-10 * peak, "adaptive": True})
            evals += int(res.nfev)
            if res.fun < best_err:
                best_err, best_theta = float(res.fun), unpack(res.x)

    params = SirsParams(*(float(v) for v in best_theta))
    traj, U, A, I = rollout(*params.as_array(), A0, 0.0, steps)
    end = SirsState(float(U), float(A), float(I))
    return SirsFit(params, (lo, hi), best_err, best_err <= CONVERGENCE_FRACTION * peak, traj, end, evals)


def predict_sirs(fit: SirsFit, horizon: int, force: bool = False) -> SirsPrediction:
    """Continue the fitted dynamics for ``horizon`` days after the fitted window."""
    if not fit.converged and not force:
        raise ValueError("fit did not converge; pass force=True to predict anyway")
    start = fit.window[1] + 1
    if horizon <= 0:
        return SirsPrediction(np.zeros(0), not fit.converged, start)
    p = fit.params
    s = fit.end_state
    traj, *_ = rollout(p.S0, p.alpha, p.beta, p.gamma, p.epsilon, s.A, s.I, horizon)
    return SirsPrediction(traj[1:], not fit.converged, start)


def fits_to_csv(rows) -> str:
    """``rows``: iterable of (app_id, SirsFit)."""
    buf = io.StringIO()
    buf.write("app_id,S0,alpha,beta,gamma,epsilon,rmse,converged\n")
    for app, f in rows:
        p = f.params
        buf.write(f"{app},{p.S0!r},{p.alpha!r},{p.beta!r},{p.gamma!r},{p.epsilon!r},{f.rmse!r},{int(f.converged)}\n")
    return buf.getvalue()


def predictions_to_csv(rows) -> str:
    """``rows``: iterable of (app_id, SirsPrediction)."""
    buf = io.StringIO()
    buf.write("app_id,day,pred,low_confidence\n")
    for app, pr in rows:
        for k, v in enumerate(pr.values):
            buf.write(f"{app},{pr.start + k},{float(v)!r},{int(pr.low_confidence)}\n")
    return buf.getvalue()
