"""Random forest for binary labels: Gini CART trees on bootstrap samples,
out-of-bag accuracy and permutation importance."""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

FOREST_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 200
    max_depth: int | None = None
    min_leaf: int = 2
    features_per_split: int | None = None  # default ceil(sqrt(p))
    seed: int = 0
    importance: bool = True

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # P(class 1) at each node

    def apply(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while len(active):
            nd = node[active]
            go_left = X[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def used_features(self) -> np.ndarray:
        return np.unique(self.feature[self.feature >= 0])

    def to_dict(self):
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=float))


@dataclass
class Forest:
    trees: list
    n_features: int
    oob_importance: np.ndarray
    oob_accuracy: float
    constant: bool = False  # trained on a single class
    feature_names: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({
            "version": FOREST_FORMAT_VERSION,
            "n_features": self.n_features,
            "constant": self.constant,
            "oob_accuracy": None if math.isnan(self.oob_accuracy) else self.oob_accuracy,
            "oob_importance": self.oob_importance.tolist(),
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        })

    @classmethod
    def from_json(cls, text: str) -> "Forest":
        d = json.loads(text)
        if d.get("version") != FOREST_FORMAT_VERSION:
            raise ValueError(f"unsupported forest format {d.get('version')!r}")
        acc = d["oob_accuracy"]
        return cls([Tree.from_dict(t) for t in d["trees"]], d["n_features"],
                   np.array(d["oob_importance"], dtype=float), math.nan if acc is None else acc,
                   d["constant"], d.get("feature_names", []))


def gini(pos, n):
    p = pos / n
    return 2.0 * p * (1.0 - p)


def _best_split(X, y, idx, feats, min_leaf):
    """(gain, feature, threshold) of the best split over the candidate features, or None."""
    n = len(idx)
    sub = X[np.ix_(idx, feats)]
    order = np.argsort(sub, axis=0, kind="stable")
    xs = np.take_along_axis(sub, order, axis=0)
    ys = y[idx][order]
    cpos = np.cumsum(ys, axis=0)[:-1]  # positives left of split after row i
    n_left = np.arange(1, n)[:, None].astype(float)
    n_right = n - n_left
    tot = cpos[-1] + ys[-1] if n > 1 else ys[0]
    parent = gini(tot.astype(float), n)
    imp = (n_left * gini(cpos, n_left) + n_right * gini(tot - cpos, n_right)) / n
    gain = parent - imp
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    gain = np.where(valid, gain, -np.inf)
    # ties: lowest feature index, then lowest threshold
    best = None
    for col in np.argsort(feats, kind="stable"):
        i = int(np.argmax(gain[:, col]))
        g = gain[i, col]
        if g > 0 and (best is None or g > best[0]):
            thr = 0.5 * (xs[i, col] + xs[i + 1, col])
            best = (float(g), int(feats[col]), float(thr))
    return best


def grow_tree(X, y, rows, cfg: ForestConfig, rng, n_feat_split: int) -> Tree:
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = new_node(rows)
    stack = [(root, rows, 0)]
    p = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        pos = y[idx].sum()
        if pos == 0 or pos == len(idx) or len(idx) < 2 * cfg.min_leaf:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        feats = rng.choice(p, size=min(n_feat_split, p), replace=False)
        split = _best_split(X, y, idx, feats, cfg.min_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value))


def _train_one(args):
    X, y, cfg, seq, n_feat_split = args
    rng = np.random.default_rng(seq)
    n = len(y)
    rows = rng.integers(0, n, size=n)
    tree = grow_tree(X, y, rows, cfg, rng, n_feat_split)
    oob = np.setdiff1d(np.arange(n), rows)
    drops = {}
    if cfg.importance and len(oob):
        Xo = X[oob]
        base = np.mean((tree.predict_proba(Xo) > 0.5) == y[oob])
        for f in tree.used_features():
            Xp = Xo.copy()
            Xp[:, f] = Xp[rng.permutation(len(oob)), f]
            drops[int(f)] = base - np.mean((tree.predict_proba(Xp) > 0.5) == y[oob])
    return tree, oob, drops


def train(X, y, cfg: ForestConfig = ForestConfig(), feature_names=None, workers: int = 1) -> Forest:
    """Fit a forest; per-tree randomness is spawned from ``cfg.seed`` so ``workers`` does not
    change the result."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if len(y) and not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    p = X.shape[1]
    names = list(feature_names) if feature_names is not None else []
    classes = np.unique(y)
    if len(classes) < 2:
        cls = int(classes[0]) if len(classes) else 0
        leaf = Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([float(cls)]))
        return Forest([leaf], p, np.zeros(p), 1.0 if len(y) else math.nan, constant=True, feature_names=names)
    if min(np.bincount(y, minlength=2)) < 2:
        raise ValueError("need at least 2 examples of each class")

    n_feat_split = cfg.features_per_split or max(1, math.ceil(math.sqrt(p)))
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    jobs = [(X, y, cfg, s, n_feat_split) for s in seqs]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, jobs))
    else:
        results = [_train_one(j) for j in jobs]

    n = len(y)
    votes = np.zeros(n)
    counts = np.zeros(n)
    imp = np.zeros(p)
    n_imp = 0
    for tree, oob, drops in results:
        if len(oob):
            votes[oob] += tree.predict_proba(X[oob]) > 0.5
            counts[oob] += 1
            n_imp += 1
            for f, d in drops.items():
                imp[f] += d
    seen = counts > 0
    oob_pred = (votes[seen] > counts[seen] / 2).astype(np.int64)
    oob_acc = float(np.mean(oob_pred == y[seen])) if seen.any() else math.nan
    imp = np.maximum(imp / max(n_imp, 1), 0.0) if cfg.importance else np.zeros(p)
    return Forest([r[0] for r in results], p, imp, oob_acc, feature_names=names)


def predict_proba(forest: Forest, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    return np.mean([t.predict_proba(X) for t in forest.trees], axis=0)


def predict(forest: Forest, x):
    """Majority vote of the trees (ties go to class 0); probability is the mean leaf P(class 1).

    A single row gives ``(label, probability)``; a matrix gives two arrays.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {X.shape[1]}")
    per_tree = np.array([t.predict_proba(X) for t in forest.trees])
    votes = (per_tree > 0.5).sum(axis=0)
    labels = (votes > len(forest.trees) / 2).astype(np.int64)
    prob = per_tree.mean(axis=0)
    if single:
        return int(labels[0]), float(prob[0])
    return labels, prob


def evaluate(forest_or_pred, X_test=None, y_test=None) -> dict:
    """accuracy plus precision and recall ordered (+, -).

    Pass a forest with test data, or an array of predicted labels as the first
    argument and the true labels as ``y_test``.
    """
    if isinstance(forest_or_pred, Forest):
        pred, _ = predict(forest_or_pred, np.atleast_2d(X_test))
    else:
        pred = np.asarray(forest_or_pred).astype(np.int64)
    y = np.asarray(y_test).astype(np.int64)
    if not len(y):
        raise ValueError("empty test set")

    def ratio(a, b):
        return float(a / b) if b else math.nan

    tp = int(np.sum((pred == 1) & (y == 1)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    return {
        "accuracy": ratio(tp + tn, len(y)),
        "precision": (ratio(tp, tp + fp), ratio(tn, tn + fn)),
        "recall": (ratio(tp, tp + fn), ratio(tn, tn + fp)),
    }
