"""Popularity p(x), sociality p(x|y) and the popularity-sociality plane."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .core import ActivityLog, SocialGraph

HIST_BINS = 40


@dataclass(frozen=True)
class SocialityPoint:
    app: int
    n_users: int
    popularity: float
    sociality_conditional: float  # nan when nobody has a user friend
    sociality_meanfrac: float  # nan when there are no users
    ratio: float  # nan when popularity is 0

    @property
    def defined(self) -> bool:
        return not (math.isnan(self.sociality_conditional) or math.isnan(self.ratio))


def user_mask(log_: ActivityLog, graph: SocialGraph, app, as_of: int) -> np.ndarray:
    """Ever-adopters as of ``as_of`` (>= 1 event on or before that day)."""
    if not 0 <= as_of < log_.horizon:
        raise ValueError(f"as_of={as_of} outside horizon")
    ev = log_.events(app)
    mask = np.zeros(graph.node_count, dtype=bool)
    mask[ev.users[ev.days <= as_of]] = True
    return mask


def user_friend_counts(graph: SocialGraph, users: np.ndarray) -> np.ndarray:
    """Number of user friends of every node."""
    return graph.neighbor_sum(users.astype(np.int64))


def popularity(log_: ActivityLog, graph: SocialGraph, app, as_of: int) -> float:
    users = user_mask(log_, graph, app, as_of)
    return float(users.sum() / graph.node_count) if graph.node_count else 0.0


def _sociality_from_mask(graph, users):
    fc = user_friend_counts(graph, users)
    exposed = fc > 0
    cond = float((users & exposed).sum() / exposed.sum()) if exposed.any() else math.nan
    if users.any():
        u = np.flatnonzero(users)
        deg = graph.degree[u]
        frac = np.where(deg > 0, fc[u] / np.maximum(deg, 1), 0.0)
        meanfrac = float(frac.mean())
    else:
        meanfrac = math.nan
    return cond, meanfrac, fc


def sociality(log_: ActivityLog, graph: SocialGraph, app, as_of: int) -> tuple[float, float]:
    """(conditional, mean_fraction); each is nan when its denominator is zero.

    conditional: P(user | at least one user friend) over the whole population.
    mean_fraction: average over users of (user friends / degree); users with no
    friends contribute 0.
    """
    cond, meanfrac, _ = _sociality_from_mask(graph, user_mask(log_, graph, app, as_of))
    return cond, meanfrac


def sociality_point(log_, graph, app, as_of) -> SocialityPoint:
    users = user_mask(log_, graph, app, as_of)
    n_users = int(users.sum())
    pop = n_users / graph.node_count if graph.node_count else 0.0
    cond, meanfrac, _ = _sociality_from_mask(graph, users)
    ratio = cond / pop if pop > 0 and not math.isnan(cond) else math.nan
    return SocialityPoint(int(app), n_users, pop, cond, meanfrac, ratio)


@dataclass(frozen=True)
class SocialityHistogram:
    pop_edges: np.ndarray  # log10 edges
    soc_edges: np.ndarray
    counts: np.ndarray  # rows: sociality bins, cols: popularity bins
    relative: np.ndarray  # counts / min nonzero count


def sociality_map(log_, graph, apps, as_of, bins: int = HIST_BINS):
    """Points for every app plus a log10-binned 2-D histogram of the defined ones."""
    if not len(apps):
        raise ValueError("empty app list")
    points = [sociality_point(log_, graph, a, as_of) for a in apps]
    plotted = [p for p in points if p.defined and p.popularity > 0 and p.sociality_conditional > 0]
    x = np.log10([p.popularity for p in plotted]) if plotted else np.zeros(0)
    y = np.log10([p.sociality_conditional for p in plotted]) if plotted else np.zeros(0)
    lo = math.floor(min(x.min(), y.min())) if plotted else -6
    pop_edges = np.linspace(lo, 0, bins + 1)
    soc_edges = np.linspace(lo, 0, bins + 1)
    counts, _, _ = np.histogram2d(y, x, bins=[soc_edges, pop_edges])
    counts = counts.astype(np.int64)
    nz = counts[counts > 0]
    relative = counts / nz.min() if len(nz) else counts.astype(float)
    return points, SocialityHistogram(pop_edges, soc_edges, counts, relative)


def _fmt(v):
    return "" if isinstance(v, float) and math.isnan(v) else repr(float(v))


def points_to_csv(points) -> str:
    buf = io.StringIO()
    buf.write("app_id,n_users,popularity,sociality_cond,sociality_meanfrac,ratio\n")
    for p in points:
        buf.write(f"{p.app},{p.n_users},{_fmt(p.popularity)},{_fmt(p.sociality_conditional)},"
                  f"{_fmt(p.sociality_meanfrac)},{_fmt(p.ratio)}\n")
    return buf.getvalue()


def histogram_to_csv(hist: SocialityHistogram) -> str:
    """Grid CSV: one row per sociality bin (lower edge), one column per popularity bin."""
    buf = io.StringIO()
    buf.write("log10_soc_lo," + ",".join(f"{e:.4f}" for e in hist.pop_edges[:-1]) + "\n")
    for i, e in enumerate(hist.soc_edges[:-1]):
        buf.write(f"{e:.4f}," + ",".join(str(int(c)) for c in hist.counts[i]) + "\n")
    return buf.getvalue()
