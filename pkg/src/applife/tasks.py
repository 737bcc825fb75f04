"""Prediction protocols: binary long-term success and pairwise relative success."""
from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import forest as rf
from .core import ActivityLog, AttributeTable, SocialGraph, active_users
from .features import FeatureMatrix, FeatureOptions, apply_imputation, feature_matrix, fit_imputation

log = logging.getLogger(__name__)

MAU_WINDOW = 30
MIN_MINORITY = 0.10
DEFAULT_SETS = {
    "All": ("temporal", "demographic", "retention", "social", "sirs"),
    "Temporal": ("temporal",),
    "Demographic": ("demographic",),
    "Retention": ("retention",),
    "Social": ("social",),
}
TOP_N = 5
MIN_PAIR_EXAMPLES = 20


class TaskError(ValueError):
    pass


def mau_at(log_: ActivityLog, apps, day: int) -> np.ndarray:
    if not MAU_WINDOW - 1 <= day < log_.horizon:
        raise ValueError(f"day {day} is not a valid MAU day")
    return np.array([active_users(log_, a, day, MAU_WINDOW) for a in apps], dtype=np.int64)


# ---------------------------------------------------------------------------
# binary task


@dataclass
class BinaryLabeling:
    apps: np.ndarray
    ratio: np.ndarray
    labels: np.ndarray  # 1 positive, 0 negative
    excluded: list  # apps with MAU@t1 = 0

    @property
    def positive_fraction(self) -> float:
        return float(self.labels.mean()) if len(self.labels) else math.nan


def label_from_mau(apps, m1, m2) -> BinaryLabeling:
    apps = np.asarray(apps)
    m1 = np.asarray(m1, dtype=float)
    m2 = np.asarray(m2, dtype=float)
    keep = m1 > 0
    if not keep.any():
        raise TaskError("no labelable apps (MAU@t1 is 0 everywhere)")
    ratio = m2[keep] / m1[keep]
    # exactly half counts as positive
    return BinaryLabeling(apps[keep], ratio, (ratio >= 0.5).astype(np.int64), apps[~keep].tolist())


def label_binary(log_: ActivityLog, apps, t1: int, t2: int) -> BinaryLabeling:
    if not t2 > t1:
        raise ValueError("need t2 > t1")
    apps = list(apps)
    return label_from_mau(apps, mau_at(log_, apps, t1), mau_at(log_, apps, t2))


@dataclass
class TaskReport:
    feature_set: str
    accuracy: float
    precision: tuple  # (+, -)
    recall: tuple  # (+, -)
    baseline: float  # guess-majority accuracy on the test apps
    n_train: int
    n_test: int
    oob_accuracy: float
    top_within_class: list = field(default_factory=list)  # (name, importance) from this set's model
    top_among_all: list = field(default_factory=list)  # this set's features ranked by the All model

    def to_dict(self) -> dict:
        d = asdict(self)
        d["precision"], d["recall"] = list(self.precision), list(self.recall)
        return d


def _stratified_split(labels, train_frac, rng):
    train = []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        train.extend(idx[: int(round(train_frac * len(idx)))].tolist())
    train = np.sort(np.array(train, dtype=np.int64))
    test = np.setdiff1d(np.arange(len(labels)), train)
    return train, test


def _columns(groups, wanted):
    return np.array([j for j, g in enumerate(groups) if g in wanted], dtype=np.int64)


def _top(names, imp, cols, n=TOP_N):
    order = sorted(cols, key=lambda j: (-imp[j], j))
    return [(names[j], float(imp[j])) for j in order[:n]]


def run_binary_task(log_: ActivityLog, graph: SocialGraph, attributes: AttributeTable | None, t1: int, t2: int,
                    feature_sets: dict | None = None, split: float = 0.7, cfg: rf.ForestConfig = rf.ForestConfig(),
                    options: FeatureOptions = FeatureOptions(), seed=0, features: FeatureMatrix | None = None,
                    workers: int = 1):
    """One report per feature set, all trained and tested on the same seeded app split.

    Features come from the window ending at ``t1``.  Returns (reports, labeling, features).
    """
    feature_sets = dict(DEFAULT_SETS if feature_sets is None else feature_sets)
    labeling = label_binary(log_, log_.app_ids, t1, t2)
    minority = min(labeling.positive_fraction, 1 - labeling.positive_fraction)
    if minority < MIN_MINORITY:
        raise TaskError(f"minority class is {minority:.1%} of apps (< {MIN_MINORITY:.0%})")
    apps = labeling.apps.tolist()
    if features is None:
        features = feature_matrix(log_, graph, attributes, apps, t1, options, workers=workers)
    else:
        features = features.subset(apps)
    y = labeling.labels
    train, test = _stratified_split(y, split, np.random.default_rng([int(seed), 1]))
    if len(test) == 0:
        raise TaskError("empty test split")
    imp = fit_imputation(features, train)
    X = apply_imputation(features, imp)
    names, groups = imp.names, imp.groups

    majority = int(y[train].mean() > 0.5)
    baseline = float(np.mean(y[test] == majority))

    all_model = None
    reports = []
    ordered = sorted(feature_sets, key=lambda s: s != "All")  # All first, its importances are reused
    for name in ordered:
        cols = _columns(groups, feature_sets[name])
        if not len(cols):
            log.warning("feature set %s selects no columns; skipped", name)
            continue
        model = rf.train(X[np.ix_(train, cols)], y[train], cfg, [names[j] for j in cols], workers=workers)
        ev = rf.evaluate(model, X[np.ix_(test, cols)], y[test])
        within = _top([names[j] for j in cols], model.oob_importance, range(len(cols)))
        if name == "All":
            all_model = (model, cols)
        reports.append(TaskReport(name, ev["accuracy"], ev["precision"], ev["recall"], baseline, len(train),
                                  len(test), model.oob_accuracy, within))
    if all_model is not None:
        model, all_cols = all_model
        full_imp = np.zeros(len(names))
        full_imp[all_cols] = model.oob_importance
        for r in reports:
            cols = _columns(groups, feature_sets[r.feature_set])
            r.top_among_all = _top(names, full_imp, cols)
    reports.sort(key=lambda r: list(feature_sets).index(r.feature_set))
    return reports, labeling, features


def reports_to_json(reports, extra: dict | None = None) -> str:
    out = {"reports": [r.to_dict() for r in reports]}
    if extra:
        out.update(extra)
    return json.dumps(out, indent=2, sort_keys=True, allow_nan=True)


# ---------------------------------------------------------------------------
# pairwise task


@dataclass(frozen=True)
class PairExample:
    a: int
    b: int
    label: int  # 1 if a ends above b


def decile_of(values, apps, deciles: int = 10) -> np.ndarray:
    """Decile of each app by value; ties broken by app id."""
    values = np.asarray(values)
    apps = np.asarray(apps)
    order = np.lexsort((apps, values))
    rank = np.empty(len(values), dtype=np.int64)
    rank[order] = np.arange(len(values))
    return rank * deciles // max(len(values), 1), rank


def build_pairs(apps, mau_start, mau_end, k: int, max_pairs: int = 5000, seed=0, deciles: int = 10) -> list:
    """Ordered pair examples within a start decile whose outcome deciles are >= k apart.

    ``max_pairs`` bounds the number of unordered pairs; both orderings of each are emitted.
    Apps with zero starting MAU (not launched yet, or dead) are not paired.
    """
    apps = np.asarray(apps)
    live = np.asarray(mau_start) > 0
    apps, mau_start, mau_end = apps[live], np.asarray(mau_start)[live], np.asarray(mau_end)[live]
    d_start, _ = decile_of(mau_start, apps, deciles)
    d_end, r_end = decile_of(mau_end, apps, deciles)
    cand = []
    for d in range(deciles):
        idx = np.flatnonzero(d_start == d)
        if len(idx) < 2:
            continue
        i, j = np.triu_indices(len(idx), 1)
        i, j = idx[i], idx[j]
        ok = np.abs(d_end[i] - d_end[j]) >= k
        cand.append(np.column_stack([i[ok], j[ok]]))
    cand = np.vstack(cand) if cand else np.zeros((0, 2), dtype=np.int64)
    if not len(cand):
        raise TaskError(f"no qualifying pairs for k={k}")
    if len(cand) > max_pairs:
        rng = np.random.default_rng([int(v) for v in np.atleast_1d(seed)] + [int(k)])
        cand = cand[np.sort(rng.choice(len(cand), size=max_pairs, replace=False))]
    out = []
    for i, j in cand:
        lab = int(r_end[i] > r_end[j])
        out.append(PairExample(int(apps[i]), int(apps[j]), lab))
        out.append(PairExample(int(apps[j]), int(apps[i]), 1 - lab))
    return out


def pair_matrix(pairs, X, row_of):
    ia = np.array([row_of[p.a] for p in pairs])
    ib = np.array([row_of[p.b] for p in pairs])
    y = np.array([p.label for p in pairs], dtype=np.int64)
    return np.hstack([X[ia], X[ib]]), y


@dataclass
class PairwiseReport:
    ks: list
    accuracy: dict  # feature set -> {k: accuracy}
    n_train: dict  # k -> examples
    n_test: dict
    snapshots: tuple  # (t0, t1, t2)
    feature_window_ends: tuple  # (train, test)

    def to_dict(self):
        return {"ks": self.ks, "accuracy": {s: {str(k): v for k, v in c.items()} for s, c in self.accuracy.items()},
                "n_train": {str(k): v for k, v in self.n_train.items()},
                "n_test": {str(k): v for k, v in self.n_test.items()},
                "snapshots": list(self.snapshots), "feature_window_ends": list(self.feature_window_ends)}


def check_time_shift(t0: int, t1: int, t2: int, window_len: int = MAU_WINDOW):
    """Feature windows must end before the outcome MAU windows begin."""
    if not t0 < t1 < t2:
        raise ValueError("snapshots must satisfy t0 < t1 < t2")
    if t1 - window_len + 1 <= t0 or t2 - window_len + 1 <= t1:
        raise ValueError("feature window overlaps the outcome MAU window; need gaps of >= 30 days")


def run_pairwise_task(log_: ActivityLog, graph: SocialGraph, attributes: AttributeTable | None, t0: int, t1: int,
                      t2: int, ks=range(1, 10), feature_sets: dict | None = None,
                      cfg: rf.ForestConfig = rf.ForestConfig(), options: FeatureOptions = FeatureOptions(),
                      seed=0, max_pairs: int = 5000, randomize_labels: bool = False,
                      train_divergence: int | None = 1, workers: int = 1):
    """Train on pairs formed at t0 with outcomes at t1, test on pairs formed at t1 with outcomes at t2.

    With ``train_divergence`` set, one model per feature set is trained on all
    pairs at least that many deciles apart and scored on the test pairs of
    every k.  ``None`` retrains at each k on pairs filtered by the same k.
    """
    check_time_shift(t0, t1, t2)
    feature_sets = dict({"Temporal": ("temporal",)} if feature_sets is None else feature_sets)
    apps = log_.app_ids
    # each feature matrix only sees the log up to its window end
    train_log, test_log = log_.truncate(t0), log_.truncate(t1)
    F_train = feature_matrix(train_log, graph, attributes, apps, t0, options, workers=workers)
    F_test = feature_matrix(test_log, graph, attributes, apps, t1, options, workers=workers)
    imp = fit_imputation(F_train)
    X_train, X_test = apply_imputation(F_train, imp), apply_imputation(F_test, imp)
    row_of = {a: i for i, a in enumerate(apps)}
    m0, m1, m2 = (mau_at(log_, apps, t) for t in (t0, t1, t2))
    if randomize_labels:
        rng = np.random.default_rng([int(seed), 2])
        m1, m2 = m1[rng.permutation(len(m1))], m2[rng.permutation(len(m2))]

    def fit_models(k):
        p_train = build_pairs(apps, m0, m1, k, max_pairs, seed=[int(seed), 3])
        if len(p_train) < MIN_PAIR_EXAMPLES:
            raise TaskError(f"{len(p_train)} training examples at k={k}")
        Xa, ya = pair_matrix(p_train, X_train, row_of)
        models = {}
        for name, wanted in feature_sets.items():
            cols = _columns(imp.groups, wanted)
            both = np.r_[cols, cols + len(imp.names)]
            models[name] = (rf.train(Xa[:, both], ya, cfg, workers=workers), both)
        return models, len(p_train)

    fixed = fit_models(train_divergence) if train_divergence is not None else None
    ks = list(ks)
    acc = {s: {} for s in feature_sets}
    n_train, n_test = {}, {}
    for k in ks:
        try:
            p_test = build_pairs(apps, m1, m2, k, max_pairs, seed=[int(seed), 4])
            if len(p_test) < MIN_PAIR_EXAMPLES:
                raise TaskError(f"{len(p_test)} test examples at k={k}")
            models, n_tr = fixed if fixed is not None else fit_models(k)
        except TaskError as exc:
            log.warning("k=%d omitted: %s", k, exc)
            continue
        n_train[k], n_test[k] = n_tr, len(p_test)
        Xb, yb = pair_matrix(p_test, X_test, row_of)
        for name, (model, both) in models.items():
            acc[name][k] = rf.evaluate(model, Xb[:, both], yb)["accuracy"]
    return PairwiseReport([k for k in ks if k in n_train], acc, n_train, n_test, (t0, t1, t2), (t0, t1))


def curve_to_csv(report: PairwiseReport) -> str:
    buf = io.StringIO()
    buf.write("feature_set,k,accuracy,n_train,n_test\n")
    for name, curve in report.accuracy.items():
        for k in report.ks:
            buf.write(f"{name},{k},{curve[k]!r},{report.n_train[k]},{report.n_test[k]}\n")
    return buf.getvalue()
