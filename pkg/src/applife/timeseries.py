"""Daily-activity series: normalisation, month statistics, k-means, MAU transitions."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .core import ActivityLog, active_series, dau_series

MONTH_DAYS = 30
N_MONTHS = 12
MAX_ITER = 300


@dataclass(frozen=True)
class DailySeries:
    app: int
    values: np.ndarray
    start: int  # first day of the window

    def __post_init__(self):
        if np.any(np.asarray(self.values) < 0):
            raise ValueError("series values must be >= 0")

    @property
    def window(self) -> tuple[int, int]:
        return self.start, self.start + len(self.values) - 1


def app_series(log_: ActivityLog, app, kind: str = "dau") -> np.ndarray:
    """Full-horizon series of one kind: dau, wau, mau, users (cumulative) or new."""
    ev = log_.events(app)
    h = log_.horizon
    if kind == "dau":
        return dau_series(ev, h)
    if kind == "wau":
        return active_series(ev, h, 7)
    if kind == "mau":
        return active_series(ev, h, 30)
    _, first = ev.first_days()
    new = np.bincount(first, minlength=h)[:h].astype(np.int64)
    if kind == "new":
        return new
    if kind == "users":
        return np.cumsum(new)
    raise ValueError(f"unknown series kind {kind!r}")


def peak_normalize(series) -> np.ndarray:
    v = np.asarray(getattr(series, "values", series), dtype=float)
    peak = v.max() if len(v) else 0.0
    if peak <= 0:
        raise ValueError("cannot normalise an all-zero series")
    return v / peak


def launch_window(log_: ActivityLog, app, length: int = 100) -> DailySeries | None:
    """DAU over the first ``length`` days after the app's first event (None if it does not fit)."""
    ev = log_.events(app)
    if not len(ev):
        return None
    start = int(ev.days.min())
    if start + length > log_.horizon:
        return None
    dau = dau_series(ev, log_.horizon)
    return DailySeries(int(app), dau[start:start + length], start)


# ---------------------------------------------------------------------------
# month statistics


def _mmm(x):
    if not len(x):
        return (math.nan, math.nan, math.nan)
    return (float(np.median(x)), float(np.min(x)), float(np.max(x)))


def delta_stats(series, month_index: int) -> dict:
    """{med,min,max} of value, first and second difference within 30-day month X (1..12).

    Months are the fixed blocks [30(X-1), 30X) of the series; differences are
    taken inside the block only.
    """
    v = np.asarray(getattr(series, "values", series), dtype=float)
    if not 1 <= month_index <= N_MONTHS:
        raise ValueError("month_index must be in 1..12")
    if len(v) < MONTH_DAYS * month_index:
        raise ValueError(f"series must cover {MONTH_DAYS * month_index} days")
    block = v[MONTH_DAYS * (month_index - 1): MONTH_DAYS * month_index]
    d1 = np.diff(block)
    d2 = np.diff(block, n=2)
    out = {}
    for name, arr in (("value", block), ("delta", d1), ("delta2", d2)):
        med, lo, hi = _mmm(arr)
        out[name] = {"med": med, "min": lo, "max": hi}
    return out


# ---------------------------------------------------------------------------
# k-means


@dataclass
class KMeansResult:
    k: int
    centroids: np.ndarray  # (k, length)
    assignment: np.ndarray  # training-set assignment
    train_score: float
    test_score: float
    train_index: np.ndarray
    test_index: np.ndarray
    test_assignment: np.ndarray
    objective_trace: list


def _nearest(X, C):
    d2 = (X**2).sum(1)[:, None] - 2 * X @ C.T + (C**2).sum(1)[None, :]
    d2 = np.maximum(d2, 0)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(X)), idx])


def lloyd(X, k, rng, max_iter=MAX_ITER):
    """One Lloyd run from k distinct random data points; returns (centroids, labels, trace)."""
    C = X[rng.choice(len(X), size=k, replace=False)].copy()
    labels = None
    trace = []
    for _ in range(max_iter):
        new, dist = _nearest(X, C)
        trace.append(float((dist**2).sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(k):
            members = X[labels == j]
            if len(members):
                C[j] = members.mean(axis=0)
    labels, dist = _nearest(X, C)
    return C, labels, trace


def kmeans_cluster(series_set, k: int, restarts: int = 100, split: float = 0.75, seed=0) -> KMeansResult:
    """Best-of-restarts Lloyd k-means with L2 distance and a train/test split.

    Scores are the mean distance from each series to its nearest centroid.
    """
    X = np.array([np.asarray(getattr(s, "values", s), dtype=float) for s in series_set])
    if X.ndim != 2:
        raise ValueError("series must have equal lengths")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(X))
    n_train = int(round(split * len(X)))
    train, test = np.sort(perm[:n_train]), np.sort(perm[n_train:])
    if k > len(train):
        raise ValueError("k exceeds the training set size")
    Xtr = X[train]
    best = None
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(restarts)):
        C, labels, trace = lloyd(Xtr, k, np.random.default_rng(ss))
        _, dist = _nearest(Xtr, C)
        score = float(dist.mean())
        if best is None or score < best[0]:
            best = (score, C, labels, trace)
    score, C, labels, trace = best
    if len(test):
        test_labels, test_dist = _nearest(X[test], C)
        test_score = float(test_dist.mean())
    else:
        test_labels, test_score = np.zeros(0, dtype=np.int64), math.nan
    return KMeansResult(k, C, labels, score, test_score, train, test, test_labels, trace)


# ---------------------------------------------------------------------------
# MAU transitions


@dataclass
class MauTransition:
    edges: np.ndarray  # log-bin edges; bin 0 is the zero-MAU underflow bin
    joint: np.ndarray  # rows: MAU@t2 bin, cols: MAU@t1 bin
    conditional: np.ndarray  # column-normalised joint


def mau_bin(values, bins_per_decade: int, n_bins: int) -> np.ndarray:
    """Bin 0 holds zeros; bin b >= 1 holds [10^((b-1)/bpd), 10^(b/bpd))."""
    v = np.asarray(values, dtype=float)
    b = np.zeros(len(v), dtype=np.int64)
    pos = v > 0
    b[pos] = np.floor(np.log10(v[pos]) * bins_per_decade + 1e-9).astype(np.int64) + 1
    return np.minimum(b, n_bins - 1)


def mau_transition(log_: ActivityLog, apps, t1: int, t2: int, bins_per_decade: int = 4) -> MauTransition:
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    if t1 < 29 or t2 >= log_.horizon:
        raise ValueError("MAU days must lie in [29, horizon)")
    series = [app_series(log_, a, "mau") for a in apps]
    m1 = np.array([s[t1] for s in series])
    m2 = np.array([s[t2] for s in series])
    return transition_from_values(m1, m2, bins_per_decade)


def transition_from_values(m1, m2, bins_per_decade: int = 4) -> MauTransition:
    top = max(float(np.max(m1, initial=0)), float(np.max(m2, initial=0)), 1.0)
    n_dec = max(1, math.ceil(math.log10(top) + 1e-12))
    if 10 ** n_dec <= top:
        n_dec += 1
    n_bins = n_dec * bins_per_decade + 1
    edges = np.r_[0.0, 10 ** (np.arange(n_bins) / bins_per_decade)]
    joint = np.zeros((n_bins, n_bins), dtype=np.int64)
    np.add.at(joint, (mau_bin(m2, bins_per_decade, n_bins), mau_bin(m1, bins_per_decade, n_bins)), 1)
    colsum = joint.sum(axis=0)
    cond = np.where(colsum > 0, joint / np.maximum(colsum, 1), 0.0)
    return MauTransition(edges, joint, cond)


# ---------------------------------------------------------------------------
# csv


def centroids_to_csv(results) -> str:
    buf = io.StringIO()
    buf.write("k,centroid_idx,day,value\n")
    for r in results:
        for j, c in enumerate(r.centroids):
            for d, v in enumerate(c):
                buf.write(f"{r.k},{j},{d},{v!r}\n")
    return buf.getvalue()


def scores_to_csv(results) -> str:
    buf = io.StringIO()
    buf.write("k,train,test\n")
    for r in results:
        buf.write(f"{r.k},{r.train_score!r},{r.test_score!r}\n")
    return buf.getvalue()


def grid_to_csv(matrix, row_label="row") -> str:
    m = np.asarray(matrix)
    buf = io.StringIO()
    buf.write(row_label + "," + ",".join(str(j) for j in range(m.shape[1])) + "\n")
    for i, row in enumerate(m):
        buf.write(f"{i}," + ",".join(repr(float(x)) if m.dtype.kind == "f" else str(int(x)) for x in row) + "\n")
    return buf.getvalue()
