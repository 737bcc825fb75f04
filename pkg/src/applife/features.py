"""Per-app feature vectors over an observation window and the imputed feature matrix.

Groups: temporal, demographic, retention, social and (optionally) sirs.  Any
feature that cannot be computed is NaN; the matrix builder replaces NaN with
the training median and adds a missing-indicator column.
"""
from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import ActivityLog, AttributeTable, SocialGraph, active_series, dau_series
from .retention import fit_exponential, fit_timedep, retention_from_events
from .sirs import fit_sirs, predict_sirs
from .sociality import _sociality_from_mask
from .stats import entropy_bits
from .timeseries import MONTH_DAYS, delta_stats

log = logging.getLogger(__name__)

SCHEMA_VERSION = "applife-features/1"
GROUPS = ("temporal", "demographic", "retention", "social", "sirs")
SERIES = ("dau", "wau", "mau", "users", "new")
AGGS = ("med", "min", "max")
TOP_CATEGORIES = 10
RETENTION_OFFSETS = 30
SIRS_PRED_WEEKS = 12
OTHER = "other"


@dataclass(frozen=True)
class FeatureOptions:
    months: int = 12
    include_sirs: bool = False
    sirs_budget: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.months <= 12:
            raise ValueError("months must lie in 1..12")

    @property
    def window_len(self) -> int:
        return self.months * MONTH_DAYS


@dataclass(frozen=True)
class FeatureContext:
    """Population-wide category lists shared by every app in a run."""

    country: tuple = ()
    gender: tuple = ()
    age: tuple = ()

    @classmethod
    def from_attributes(cls, attributes: AttributeTable | None, top: int = TOP_CATEGORIES) -> "FeatureContext":
        if attributes is None:
            return cls()

        def top_values(col):
            vals, counts = np.unique(np.asarray(col).astype(str), return_counts=True)
            order = np.lexsort((vals, -counts))  # most common first, ties by value
            return tuple(str(v) for v in vals[order][:top])

        return cls(top_values(attributes.country), top_values(attributes.gender), top_values(attributes.age))


@dataclass
class FeatureVector:
    app: int
    names: tuple
    values: np.ndarray
    groups: tuple  # group of each feature
    present: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])


# ---------------------------------------------------------------------------
# feature name registry


def temporal_names(months: int = 12) -> list:
    out = []
    for s in SERIES:
        for x in range(1, months + 1):
            for kind in ("", "d_", "d2_"):
                out += [f"{agg}_{kind}{s}_{x}" for agg in AGGS]
        for kind in ("", "d_", "d2_"):
            out += [f"{agg}_{kind}{s}_year" for agg in AGGS]
        out += [f"dyear_{s}", f"dyear_med_{s}", f"dyear_rel_{s}"]
    return out


def _categorical_names(attr, cats):
    labels = list(cats) + [OTHER]
    return [f"n_{attr}_{c}" for c in labels] + [f"frac_{attr}_{c}" for c in labels]


def demographic_names(ctx: FeatureContext) -> list:
    out = []
    for attr in ("country", "gender", "age"):
        out += _categorical_names(attr, getattr(ctx, attr))
    out += [f"n_l{k}_7" for k in range(8)] + [f"frac_l{k}_7" for k in range(8)]
    out += ["n_is30", "n_isnot30", "p_is30"]
    out += ["entropy_country", "entropy_gender", "entropy_age", "entropy_l7", "entropy_is30"]
    return out


def retention_names() -> list:
    t = range(1, RETENTION_OFFSETS + 1)
    return [f"ret_N_{i}" for i in t] + [f"ret_P_{i}" for i in t] + ["ret_a", "ret_xa", "ret_A", "ret_x0"]


def social_names() -> list:
    return ["med_degree", "max_degree", "med_user_friends", "max_user_friends",
            "sociality", "sociality_meanfrac", "sociality_ratio", "popularity"]


def sirs_names() -> list:
    return ["sirs_S0", "sirs_alpha", "sirs_beta", "sirs_gamma", "sirs_epsilon"] + \
        [f"sirs_pred_{7 * w}" for w in range(1, SIRS_PRED_WEEKS + 1)]


def feature_schema(ctx: FeatureContext, options: FeatureOptions = FeatureOptions()):
    """(names, groups) in extraction order."""
    parts = [("temporal", temporal_names(options.months)), ("demographic", demographic_names(ctx)),
             ("retention", retention_names()), ("social", social_names())]
    if options.include_sirs:
        parts.append(("sirs", sirs_names()))
    names, groups = [], []
    for g, ns in parts:
        names += ns
        groups += [g] * len(ns)
    names += [f"present_{g}" for g, _ in parts]
    groups += [g for g, _ in parts]
    return tuple(names), tuple(groups)


# ---------------------------------------------------------------------------
# group extractors (each returns a list aligned with its name list, or None)


def _mmm(x):
    if not len(x):
        return [math.nan] * 3
    return [float(np.median(x)), float(np.min(x)), float(np.max(x))]


def _temporal(ev, horizon, start, months):
    new = np.bincount(ev.first_days()[1], minlength=horizon)[:horizon]
    full = {"dau": dau_series(ev, horizon), "wau": active_series(ev, horizon, 7),
            "mau": active_series(ev, horizon, 30), "users": np.cumsum(new), "new": new}
    out = []
    for s in SERIES:
        v = full[s][start:].astype(float)
        for x in range(1, months + 1):
            st = delta_stats(v, x)
            for kind in ("value", "delta", "delta2"):
                out += [st[kind]["med"], st[kind]["min"], st[kind]["max"]]
        out += _mmm(v) + _mmm(np.diff(v)) + _mmm(np.diff(v, n=2))
        first_m, last_m = v[:MONTH_DAYS], v[-MONTH_DAYS:]
        peak = v.max()
        out += [float(v[-1] - v[0]), float(np.median(last_m) - np.median(first_m)),
                float((v[-1] - v[0]) / peak) if peak > 0 else math.nan]
    return out


def _categorical(values, cats):
    vals = np.asarray(values).astype(str)
    n = len(vals)
    counts = [int(np.sum(vals == c)) for c in cats]
    counts.append(n - sum(counts))
    fracs = [c / n if n else math.nan for c in counts]
    return counts + fracs


def _entropy(values):
    if not len(values):
        return math.nan
    _, counts = np.unique(np.asarray(values).astype(str), return_counts=True)
    return entropy_bits(counts / counts.sum())


def _demographic(users, attributes, ctx):
    out = []
    out += _categorical(attributes.country[users], ctx.country)
    out += _categorical(attributes.gender[users], ctx.gender)
    out += _categorical(attributes.age[users], ctx.age)
    n = len(users)
    l7 = np.bincount(attributes.fb_l7[users].astype(np.int64), minlength=8)[:8]
    out += l7.tolist() + [c / n if n else math.nan for c in l7]
    is30 = attributes.is_mau[users].astype(bool)
    out += [int(is30.sum()), int(n - is30.sum()), float(is30.mean()) if n else math.nan]
    out += [_entropy(attributes.country[users]), _entropy(attributes.gender[users]), _entropy(attributes.age[users]),
            _entropy(attributes.fb_l7[users]), _entropy(is30)]
    return out


def _retention(ev, horizon):
    if horizon <= RETENTION_OFFSETS:
        return None
    curve = retention_from_events(ev, horizon, RETENTION_OFFSETS)
    P = [float(p) for p in curve.P[1:]]
    try:
        td = fit_timedep(curve)
        ex = fit_exponential(curve)
        fits = [td.a, td.x_a, ex.A, ex.x0]
    except ValueError:
        fits = [math.nan] * 4
    return curve.N[1:].astype(float).tolist() + P + fits


def _social(users_mask, graph):
    if not users_mask.any():
        return None
    cond, meanfrac, fc = _sociality_from_mask(graph, users_mask)
    u = np.flatnonzero(users_mask)
    pop = float(users_mask.mean())
    ratio = cond / pop if pop > 0 and math.isfinite(cond) else math.nan
    deg = graph.degree[u]
    return [float(np.median(deg)), float(deg.max()), float(np.median(fc[u])), float(fc[u].max()),
            cond, meanfrac, ratio, pop]


def _sirs(dau_window, options):
    if dau_window.max() <= 0:
        return None
    try:
        fit = fit_sirs(dau_window, budget=options.sirs_budget, seed=options.seed)
    except ValueError:
        return None
    if not fit.converged:
        return None
    pred = predict_sirs(fit, 7 * SIRS_PRED_WEEKS).values
    p = fit.params
    return [p.S0, p.alpha, p.beta, p.gamma, p.epsilon] + [float(pred[7 * w - 1]) for w in range(1, SIRS_PRED_WEEKS + 1)]


def extract_features(log_: ActivityLog, graph: SocialGraph, attributes: AttributeTable | None, app, window_end: int,
                     options: FeatureOptions = FeatureOptions(), ctx: FeatureContext | None = None) -> FeatureVector:
    """Features of ``app`` from activity on days ``window_end - window_len + 1 .. window_end``.

    Events after ``window_end`` are never read.
    """
    start = window_end - options.window_len + 1
    if start < 0 or window_end >= log_.horizon:
        raise ValueError(f"window [{start}, {window_end}] not inside horizon {log_.horizon}")
    if ctx is None:
        ctx = FeatureContext.from_attributes(attributes)
    horizon = window_end + 1
    ev = log_.events(app).until(window_end)
    names, groups = feature_schema(ctx, options)

    mask = np.zeros(graph.node_count, dtype=bool)
    mask[ev.users] = True
    users = np.flatnonzero(mask)

    blocks = {
        "temporal": _temporal(ev, horizon, start, options.months),
        "demographic": _demographic(users, attributes, ctx) if attributes is not None and len(users) else None,
        "retention": _retention(ev, horizon) if len(users) else None,
        "social": _social(mask, graph),
    }
    if options.include_sirs:
        blocks["sirs"] = _sirs(dau_series(ev, horizon)[start:].astype(float), options)

    values, present = [], {}
    sizes = {g: groups.count(g) - 1 for g in blocks}  # minus the presence flag
    for g, vals in blocks.items():
        present[g] = vals is not None
        values += vals if vals is not None else [math.nan] * sizes[g]
    values += [float(present[g]) for g in blocks]
    return FeatureVector(int(app), names, np.array(values, dtype=float), groups, present)


# ---------------------------------------------------------------------------
# matrix


@dataclass
class FeatureMatrix:
    apps: list
    names: tuple
    groups: tuple
    raw: np.ndarray  # NaN marks missing

    def row(self, app) -> int:
        return self.apps.index(app)

    def subset(self, apps) -> "FeatureMatrix":
        idx = [self.row(a) for a in apps]
        return FeatureMatrix(list(apps), self.names, self.groups, self.raw[idx])


@dataclass
class Imputation:
    medians: np.ndarray
    indicators: np.ndarray  # feature indices that receive an is-missing column
    names: tuple
    groups: tuple


def fit_imputation(fm: FeatureMatrix, rows=None) -> Imputation:
    """Per-feature medians over the training rows; indicator columns for every feature with a
    missing value there."""
    raw = fm.raw if rows is None else fm.raw[rows]
    miss = np.isnan(raw)
    med = np.zeros(raw.shape[1])
    for j in range(raw.shape[1]):
        col = raw[~miss[:, j], j]
        med[j] = float(np.median(col)) if len(col) else 0.0
    ind = np.flatnonzero(miss.any(axis=0))
    names = fm.names + tuple(f"missing_{fm.names[j]}" for j in ind)
    groups = fm.groups + tuple(fm.groups[j] for j in ind)
    return Imputation(med, ind, names, groups)


def apply_imputation(fm: FeatureMatrix, imp: Imputation, rows=None) -> np.ndarray:
    raw = fm.raw if rows is None else fm.raw[rows]
    miss = np.isnan(raw)
    X = np.where(miss, imp.medians[None, :], raw)
    return np.hstack([X, miss[:, imp.indicators].astype(float)])


def _extract_job(args):
    log_, graph, attributes, app, window_end, options, ctx = args
    return extract_features(log_, graph, attributes, app, window_end, options, ctx).values


def feature_matrix(log_: ActivityLog, graph: SocialGraph, attributes: AttributeTable | None, apps, window_end: int,
                   options: FeatureOptions = FeatureOptions(), workers: int = 1) -> FeatureMatrix:
    """Raw feature rows for ``apps`` in the given order."""
    apps = list(apps)
    if not apps:
        raise ValueError("empty app list")
    ctx = FeatureContext.from_attributes(attributes)
    names, groups = feature_schema(ctx, options)
    jobs = [(log_, graph, attributes, a, window_end, options, ctx) for a in apps]
    if workers > 1 and len(apps) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_extract_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_extract_job(j) for j in jobs]
    return FeatureMatrix(apps, names, groups, np.vstack(rows))


def impute(fm: FeatureMatrix):
    """Impute with the matrix's own medians; returns (X, names, groups)."""
    imp = fit_imputation(fm)
    return apply_imputation(fm, imp), imp.names, imp.groups


def matrix_to_csv(fm: FeatureMatrix) -> str:
    """Raw matrix; empty cells are missing values."""
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA_VERSION}\n")
    buf.write("# groups: " + ",".join(fm.groups) + "\n")
    buf.write("app_id," + ",".join(fm.names) + "\n")
    for app, row in zip(fm.apps, fm.raw):
        buf.write(f"{app}," + ",".join("" if math.isnan(v) else repr(float(v)) for v in row) + "\n")
    return buf.getvalue()


def matrix_from_csv(text: str) -> FeatureMatrix:
    groups = None
    for ln in text.splitlines():
        if ln.startswith("# groups: "):
            groups = ln[len("# groups: "):].split(",")
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    if header[0] != "app_id":
        raise ValueError("feature CSV must start with app_id")
    apps, rows = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        apps.append(int(parts[0]))
        rows.append([float(p) if p else math.nan for p in parts[1:]])
    names = tuple(header[1:])
    return FeatureMatrix(apps, names, tuple(groups) if groups else ("",) * len(names),
                         np.array(rows, dtype=float).reshape(len(apps), len(names)))
