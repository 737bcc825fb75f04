"""Adoption probability of non-users as a function of their adopter friends.

Two views: the attributes of a single adopter friend (country, age offset), and
the subgraph induced on two or three adopter friends.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import ActivityLog, AttributeTable, SocialGraph
from .stats import bootstrap_mean_ci

DEFAULT_HORIZON = 60
MIN_CELL_COUNT = 10
ACTIVE_WINDOW = 30


class NeighborhoodClass(str, Enum):
    E2 = "E2"
    K2 = "K2"
    E3 = "E3"
    P2uE1 = "P2uE1"
    P3 = "P3"
    K3 = "K3"


TWO_NODE = (NeighborhoodClass.E2, NeighborhoodClass.K2)
THREE_NODE = (NeighborhoodClass.E3, NeighborhoodClass.P2uE1, NeighborhoodClass.P3, NeighborhoodClass.K3)
_BY_EDGES = {2: TWO_NODE, 3: THREE_NODE}


def classify_neighborhood(graph: SocialGraph, friends) -> NeighborhoodClass:
    """Isomorphism class of the subgraph induced on 2 or 3 nodes.

    On three nodes the edge count alone decides the class: two edges always
    share an endpoint, so they form a path.
    """
    f = sorted(int(v) for v in set(friends))
    if len(f) not in (2, 3) or len(f) != len(list(friends)):
        raise ValueError("need exactly 2 or 3 distinct friends")
    m = sum(graph.has_edge(f[i], f[j]) for i in range(len(f)) for j in range(i + 1, len(f)))
    return _BY_EDGES[len(f)][m]


def default_snapshot(log_: ActivityLog, app) -> int:
    """Midpoint of the app's observed lifetime."""
    ev = log_.events(app)
    if not len(ev):
        return log_.horizon // 2
    return int((ev.days.min() + ev.days.max()) // 2)


def _check_window(log_, snapshot, horizon):
    if snapshot < 0 or snapshot + horizon >= log_.horizon:
        raise ValueError(f"snapshot {snapshot} + horizon {horizon} beyond log horizon {log_.horizon}")


def _status(graph, log_, app, snapshot, horizon, user_def="ever"):
    """(user mask per user_def, never-used-by-snapshot mask, adopted-in-horizon mask)."""
    ev = log_.events(app)
    users_ids, first = ev.first_days()
    first_day = np.full(graph.node_count, np.iinfo(np.int64).max, dtype=np.int64)
    first_day[users_ids] = first
    nonuser = first_day > snapshot
    adopted = nonuser & (first_day <= snapshot + horizon)
    if user_def == "ever":
        users = ~nonuser
    elif user_def == "active":
        users = np.zeros(graph.node_count, dtype=bool)
        sel = (ev.days <= snapshot) & (ev.days > snapshot - ACTIVE_WINDOW)
        users[ev.users[sel]] = True
    else:
        raise ValueError(f"unknown user_def {user_def!r}")
    return users, nonuser, adopted


def _user_friends(graph, node, users):
    nb = graph.neighbors(node)
    return nb[users[nb]]


@dataclass
class ClassCell:
    exposed: int = 0
    adopted: int = 0

    @property
    def prob(self) -> float:
        return self.adopted / self.exposed if self.exposed else math.nan


@dataclass
class NeighborhoodAdoptionProfile:
    app: int
    cells: dict = field(default_factory=dict)  # NeighborhoodClass -> ClassCell
    ratios: dict = field(default_factory=dict)
    min_count: int = MIN_CELL_COUNT

    def prob(self, cls) -> float:
        return self.cells[NeighborhoodClass(cls)].prob

    def exposed_total(self, size: int) -> int:
        return sum(self.cells[c].exposed for c in _BY_EDGES[size])


def _ratio(cells, num, den, min_count):
    a, b = cells[num], cells[den]
    if a.exposed < min_count or b.exposed < min_count or b.adopted == 0:
        return math.nan
    return a.prob / b.prob


def adoption_by_class(graph: SocialGraph, log_: ActivityLog, app, snapshot: int | None = None,
                      horizon: int = DEFAULT_HORIZON, user_def: str = "ever",
                      min_count: int = MIN_CELL_COUNT) -> NeighborhoodAdoptionProfile:
    """Adoption rates of non-users with exactly 2 or 3 user friends, by induced subgraph.

    Cells report a probability whenever they hold an exposed user; the ratios
    need ``min_count`` exposed users in both cells.
    """
    snapshot = default_snapshot(log_, app) if snapshot is None else snapshot
    _check_window(log_, snapshot, horizon)
    users, nonuser, adopted = _status(graph, log_, app, snapshot, horizon, user_def)
    fc = graph.neighbor_sum(users.astype(np.int64))
    cells = {c: ClassCell() for c in NeighborhoodClass}
    for size in (2, 3):
        for node in np.flatnonzero(nonuser & (fc == size)):
            cls = classify_neighborhood(graph, _user_friends(graph, node, users))
            cells[cls].exposed += 1
            cells[cls].adopted += int(adopted[node])
    ratios = {
        "K2/E2": _ratio(cells, "K2", "E2", min_count),
        "E3/K3": _ratio(cells, "E3", "K3", min_count),
        "P2uE1/K3": _ratio(cells, "P2uE1", "K3", min_count),
        "P3/K3": _ratio(cells, "P3", "K3", min_count),
        "K3/E3": _ratio(cells, "K3", "E3", min_count),
    }
    cells = {NeighborhoodClass(k): v for k, v in cells.items()}
    return NeighborhoodAdoptionProfile(int(app), cells, ratios, min_count)


# ---------------------------------------------------------------------------
# one-node neighbourhoods


def _single_friend_exposure(graph, log_, app, snapshot, horizon):
    users, nonuser, adopted = _status(graph, log_, app, snapshot, horizon)
    fc = graph.neighbor_sum(users.astype(np.int64))
    exposed = np.flatnonzero(nonuser & (fc == 1))
    # with exactly one user friend, the id-weighted neighbour sum is that friend's id
    ids = np.arange(graph.node_count, dtype=np.int64)
    friend = graph.neighbor_sum(np.where(users, ids, 0))[exposed]
    return users, exposed, friend, adopted[exposed]


@dataclass
class AttributeAdoptionTable:
    app: int
    values: list  # attribute value for each index; index 0 is the modal value among users
    exposed: np.ndarray  # (i, j) counts
    adopted: np.ndarray
    prob: np.ndarray  # nan below min_count
    ratios: dict
    min_count: int = MIN_CELL_COUNT

    @property
    def modal_value(self):
        return self.values[0] if self.values else None


def _pooled(exposed, adopted, mask, min_count):
    e, a = exposed[mask].sum(), adopted[mask].sum()
    return a / e if e >= min_count else math.nan


def _div(a, b):
    return a / b if b and not (math.isnan(a) or math.isnan(b)) else math.nan


def attribute_adoption(graph: SocialGraph, log_: ActivityLog, app, attributes: AttributeTable,
                       attribute: str = "country", snapshot: int | None = None,
                       horizon: int = DEFAULT_HORIZON, min_count: int = MIN_CELL_COUNT) -> AttributeAdoptionTable:
    """a(i, j) for non-users with exactly one user friend; i indexes the user's value,
    j the friend's, both ranked by frequency among the app's users (0 = modal)."""
    if attribute not in ("country", "gender", "age"):
        raise ValueError(f"cannot tabulate attribute {attribute!r}")
    snapshot = default_snapshot(log_, app) if snapshot is None else snapshot
    _check_window(log_, snapshot, horizon)
    values = np.asarray(getattr(attributes, attribute))
    users, exposed, friend, adopt = _single_friend_exposure(graph, log_, app, snapshot, horizon)

    uv, uc = np.unique(values[users], return_counts=True)
    order = sorted(zip(-uc, uv.tolist()))
    ranked = [v for _, v in order]
    rest_v, rest_c = np.unique(values[exposed], return_counts=True)
    extra = sorted((-c, v) for v, c in zip(rest_v.tolist(), rest_c) if v not in set(ranked))
    ranked += [v for _, v in extra]
    index = {v: k for k, v in enumerate(ranked)}

    k = len(ranked)
    n_exp = np.zeros((k, k), dtype=np.int64)
    n_ad = np.zeros((k, k), dtype=np.int64)
    if len(exposed):
        i = np.array([index[v] for v in values[exposed].tolist()])
        j = np.array([index[v] for v in values[friend].tolist()])
        np.add.at(n_exp, (i, j), 1)
        np.add.at(n_ad, (i, j), adopt.astype(np.int64))
    with np.errstate(invalid="ignore", divide="ignore"):
        prob = np.where(n_exp >= min_count, n_ad / np.maximum(n_exp, 1), np.nan)

    ratios = {"modal_same_vs_other": math.nan, "same_vs_modal": {}, "same_vs_other": {},
              "pooled_same_vs_modal": math.nan, "pooled_same_vs_other": math.nan}
    if k > 1:
        ii, jj = np.indices((k, k))
        ratios["modal_same_vs_other"] = _div(prob[0, 0], _pooled(n_exp, n_ad, (ii == 0) & (jj != 0), min_count))
        for a in range(1, k):
            ratios["same_vs_modal"][ranked[a]] = _div(prob[a, a], prob[a, 0])
            ratios["same_vs_other"][ranked[a]] = _div(
                prob[a, a], _pooled(n_exp, n_ad, (ii == a) & (jj != 0) & (jj != a), min_count))
        minority = ii > 0
        same = _pooled(n_exp, n_ad, minority & (ii == jj), min_count)
        ratios["pooled_same_vs_modal"] = _div(same, _pooled(n_exp, n_ad, minority & (jj == 0), min_count))
        ratios["pooled_same_vs_other"] = _div(
            same, _pooled(n_exp, n_ad, minority & (jj != 0) & (jj != ii), min_count))
    return AttributeAdoptionTable(int(app), ranked, n_exp, n_ad, prob, ratios, min_count)


@dataclass
class AgeOffsetCurve:
    edges: np.ndarray  # n_bins + 1 offsets; bin b covers [edges[b], edges[b+1]]
    counts: np.ndarray
    prob: np.ndarray  # raw adoption fraction per bin
    bands: list  # BootstrapBands per bin

    @property
    def estimate(self) -> np.ndarray:
        return np.array([b.estimate for b in self.bands])


def _offset_curve(offsets, adopt, n_bins, n_boot, rng_seed):
    order = np.lexsort((np.arange(len(offsets)), offsets))
    groups = np.array_split(order, n_bins)
    edges = np.array([offsets[g[0]] for g in groups] + [offsets[groups[-1][-1]]], dtype=float)
    counts = np.array([len(g) for g in groups])
    prob = np.array([adopt[g].mean() for g in groups])
    seq = np.random.SeedSequence(rng_seed)
    bands = [bootstrap_mean_ci(adopt[g].astype(float), n_boot, seed=s)
             for g, s in zip(groups, seq.spawn(n_bins))]
    return AgeOffsetCurve(edges, counts, prob, bands)


def age_offset_curves(graph: SocialGraph, log_: ActivityLog, app, attributes: AttributeTable,
                      snapshot: int | None = None, horizon: int = DEFAULT_HORIZON, n_boot: int = 1000,
                      n_bins: int = 20, min_bin_size: int = 2, seed: int = 0):
    """(friend-offset curve, user-offset curve); offsets are from the median age of the app's users."""
    snapshot = default_snapshot(log_, app) if snapshot is None else snapshot
    _check_window(log_, snapshot, horizon)
    users, exposed, friend, adopt = _single_friend_exposure(graph, log_, app, snapshot, horizon)
    if len(exposed) < n_bins * min_bin_size:
        raise ValueError(f"{len(exposed)} exposed users cannot fill {n_bins} bins of {min_bin_size}")
    median_age = float(np.median(attributes.age[users]))
    friend_off = attributes.age[friend] - median_age
    user_off = attributes.age[exposed] - median_age
    friend_curve = _offset_curve(friend_off, adopt, n_bins, n_boot, [seed, int(app), 0])
    user_curve = _offset_curve(user_off, adopt, n_bins, n_boot, [seed, int(app), 1])
    return friend_curve, user_curve


# ---------------------------------------------------------------------------
# csv


def _f(v):
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def profiles_to_csv(profiles) -> str:
    buf = io.StringIO()
    buf.write("app_id,class,exposed,adopted,prob\n")
    for p in profiles:
        for c in NeighborhoodClass:
            cell = p.cells[c]
            buf.write(f"{p.app},{c.value},{cell.exposed},{cell.adopted},{_f(cell.prob)}\n")
    return buf.getvalue()


def ratios_to_csv(profiles) -> str:
    keys = ["K2/E2", "K3/E3", "E3/K3", "P2uE1/K3", "P3/K3"]
    buf = io.StringIO()
    buf.write("app_id," + ",".join(keys) + "\n")
    for p in profiles:
        buf.write(f"{p.app}," + ",".join(_f(p.ratios[k]) for k in keys) + "\n")
    return buf.getvalue()


def curves_to_csv(app, curves: dict) -> str:
    """``curves`` maps a curve name (e.g. 'friend', 'user') to an AgeOffsetCurve."""
    buf = io.StringIO()
    buf.write("app_id,curve,bin,offset_lo,offset_hi,count,prob,estimate,"
              "lo68,hi68,lo95,hi95,lo997,hi997\n")
    for name, c in curves.items():
        for b, band in enumerate(c.bands):
            lv = [band.bands[k] for k in sorted(band.bands)]
            flat = ",".join(_f(x) for pair in lv for x in pair)
            buf.write(f"{app},{name},{b},{_f(c.edges[b])},{_f(c.edges[b + 1])},{c.counts[b]},"
                      f"{_f(c.prob[b])},{_f(band.estimate)},{flat}\n")
    return buf.getvalue()

