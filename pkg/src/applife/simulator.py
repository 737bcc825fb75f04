"""Synthetic social graphs, user attributes and app adoption ecosystems.

The simulated apps carry planted parameters (adoption channels, retention law,
social mode) so the analysis modules can be checked against known ground truth.
"""
from __future__ import annotations

import json
import logging
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .core import (
    DEFAULT_DEGREE_CAP,
    ActivityLog,
    AppEvents,
    AttributeTable,
    SocialGraph,
)

log = logging.getLogger(__name__)

GRAPH_MODELS = ("erdos_renyi", "watts_strogatz", "barabasi_albert")
SOCIAL_MODES = ("count", "edges", "components")


def substream(*key) -> np.random.Generator:
    """Independent generator for a tuple of non-negative ints (e.g. master seed, app id)."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# ---------------------------------------------------------------------------
# graphs


@dataclass(frozen=True)
class GraphGenConfig:
    model: str = "erdos_renyi"
    node_count: int = 1000
    edge_prob: float = 0.01  # erdos_renyi
    ring_degree: int = 10  # watts_strogatz
    rewire_prob: float = 0.1  # watts_strogatz
    attach_degree: int = 3  # barabasi_albert
    degree_cap: int = DEFAULT_DEGREE_CAP
    seed: int = 0

    def __post_init__(self):
        if self.model not in GRAPH_MODELS:
            raise ValueError(f"unknown graph model {self.model!r}")
        if self.node_count < 2:
            raise ValueError("node_count must be >= 2")
        for p in (self.edge_prob, self.rewire_prob):
            if not 0 <= p <= 1:
                raise ValueError("probabilities must lie in [0, 1]")
        if self.model == "watts_strogatz" and not 0 < self.ring_degree < self.node_count:
            raise ValueError("ring_degree must be in (0, node_count)")
        if self.model == "barabasi_albert" and not 1 <= self.attach_degree < self.node_count:
            raise ValueError("attach_degree must be in [1, node_count)")

    @classmethod
    def from_dict(cls, d: dict) -> "GraphGenConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown graph config keys {sorted(unknown)}")
        return cls(**d)


def generate_graph(cfg: GraphGenConfig) -> SocialGraph:
    import networkx as nx

    n = cfg.node_count
    if cfg.model == "erdos_renyi":
        g = nx.fast_gnp_random_graph(n, cfg.edge_prob, seed=cfg.seed) if cfg.edge_prob < 1 else nx.complete_graph(n)
    elif cfg.model == "watts_strogatz":
        g = nx.watts_strogatz_graph(n, cfg.ring_degree, cfg.rewire_prob, seed=cfg.seed)
    else:
        g = nx.barabasi_albert_graph(n, cfg.attach_degree, seed=cfg.seed)

    edges = np.array(sorted((min(a, b), max(a, b)) for a, b in g.edges()), dtype=np.int64).reshape(-1, 2)
    deg = np.bincount(edges.ravel(), minlength=n) if len(edges) else np.zeros(n, np.int64)
    if len(deg) and deg.max() > cfg.degree_cap:
        # greedy pass in canonical order keeps an edge only while both ends are under the cap
        kept = np.zeros(n, dtype=np.int64)
        keep = np.zeros(len(edges), dtype=bool)
        for i, (a, b) in enumerate(edges):
            if kept[a] < cfg.degree_cap and kept[b] < cfg.degree_cap:
                kept[a] += 1
                kept[b] += 1
                keep[i] = True
        log.info("degree cap %d: dropped %d edges", cfg.degree_cap, int((~keep).sum()))
        edges = edges[keep]
    return SocialGraph(n, edges, degree_cap=cfg.degree_cap)


# ---------------------------------------------------------------------------
# attributes


def default_distributions() -> dict:
    return {
        "country": {"US": 0.35, "BR": 0.15, "IN": 0.15, "ID": 0.1, "MX": 0.1, "GB": 0.05,
                    "TR": 0.04, "PH": 0.03, "FR": 0.02, "DE": 0.01},
        "gender": {"f": 0.48, "m": 0.48, "u": 0.04},
        # ages 13..70, roughly the shape of a social network population
        "age": {int(a): float(w) for a, w in zip(range(13, 71), _age_weights())},
        "fb_l7": {k: w for k, w in enumerate([0.05, 0.05, 0.05, 0.05, 0.08, 0.1, 0.17, 0.45])},
        "is_mau": 0.85,
    }


def _age_weights():
    a = np.arange(13, 71)
    w = np.exp(-0.5 * ((a - 27) / 11.0) ** 2) + 0.05
    return w / w.sum()


def _sample_categorical(rng, dist: dict, size):
    keys = list(dist)
    p = np.array([dist[k] for k in keys], dtype=float)
    if np.any(p < 0) or abs(p.sum() - 1) > 1e-6:
        raise ValueError("distribution must be non-negative and sum to 1")
    idx = rng.choice(len(keys), size=size, p=p / p.sum())
    return np.array(keys, dtype=object)[idx]


def _traversal_order(graph: SocialGraph, rng) -> np.ndarray:
    """Randomised BFS order; every non-root node has an earlier-visited neighbour."""
    n = graph.node_count
    seen = np.zeros(n, dtype=bool)
    order = []
    for root in rng.permutation(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([int(root)])
        while queue:
            u = queue.popleft()
            order.append(u)
            nb = graph.neighbors(u)
            nb = nb[~seen[nb]]
            if len(nb):
                nb = rng.permutation(nb)
                seen[nb] = True
                queue.extend(nb.tolist())
    return np.array(order, dtype=np.int64)


def assign_attributes(graph: SocialGraph, distributions: dict | None = None,
                      homophily_weight: float = 0.0, seed=0) -> AttributeTable:
    """Draw per-user attributes.

    Country goes through a label-propagation pass: visiting nodes in randomised
    BFS order, a node copies the country of a random already-labelled neighbour
    with probability ``homophily_weight`` and otherwise samples the marginal.
    """
    if not 0 <= homophily_weight <= 1:
        raise ValueError("homophily_weight must lie in [0, 1]")
    dist = {**default_distributions(), **(distributions or {})}
    rng = np.random.default_rng(seed)
    n = graph.node_count

    fresh = _sample_categorical(rng, dist["country"], n)
    country = np.empty(n, dtype=object)
    labelled = np.zeros(n, dtype=bool)
    coin = rng.random(n)
    pick = rng.random(n)
    for step, u in enumerate(_traversal_order(graph, rng)):
        value = fresh[step]
        if homophily_weight > 0 and coin[step] < homophily_weight:
            nb = graph.neighbors(u)
            nb = nb[labelled[nb]]
            if len(nb):
                value = country[nb[int(pick[step] * len(nb))]]
        country[u] = value
        labelled[u] = True

    gender = _sample_categorical(rng, dist["gender"], n)
    age = _sample_categorical(rng, dist["age"], n).astype(np.int64)
    fb_l7 = _sample_categorical(rng, dist["fb_l7"], n).astype(np.int64)
    is_mau = rng.random(n) < float(dist["is_mau"])
    return AttributeTable(country.astype(str), gender.astype(str), age, fb_l7, is_mau)


# ---------------------------------------------------------------------------
# apps


@dataclass(frozen=True)
class AppRegime:
    name: str = "default"
    alpha: float = 1e-3
    beta: float = 0.0
    social_mode: str = "count"
    target_country: str | None = None
    target_age: int | None = None
    affinity_boost: float = 1.0
    retention_a: float = 0.3
    retention_xa: float = 0.1
    engagement_rho: float = 0.5
    reactivation_eps: float = 0.0
    horizon: int = 200
    # fraction of the population that can ever adopt (1.0 = everybody)
    susceptible_frac: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "reactivation_eps", "susceptible_frac"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.social_mode not in SOCIAL_MODES:
            raise ValueError(f"unknown social_mode {self.social_mode!r}")
        if self.affinity_boost < 1:
            raise ValueError("affinity_boost must be >= 1")
        if not 0 <= self.retention_a < 1:
            raise ValueError("retention_a must lie in [0, 1)")
        if self.retention_xa <= 0:
            raise ValueError("retention_xa must be > 0")
        if not 0 < self.engagement_rho <= 1:
            raise ValueError("engagement_rho must lie in (0, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "AppRegime":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown regime keys {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class EcosystemSpec:
    app_count: int
    regimes: tuple  # of (AppRegime, weight)
    seed: int = 0
    # apps launch on a uniform random day in [0, launch_window]
    launch_window: int = 0

    def __post_init__(self):
        if self.app_count < 0:
            raise ValueError("app_count must be >= 0")
        if self.app_count and not self.regimes:
            raise ValueError("need at least one regime")
        w = np.array([wt for _, wt in self.regimes], dtype=float)
        if np.any(w <= 0):
            raise ValueError("regime weights must be positive")

    @property
    def weights(self) -> np.ndarray:
        w = np.array([wt for _, wt in self.regimes], dtype=float)
        return w / w.sum()

    @property
    def horizon(self) -> int:
        return max((r.horizon for r, _ in self.regimes), default=0)

    @classmethod
    def from_dict(cls, d: dict) -> "EcosystemSpec":
        regimes = tuple((AppRegime.from_dict(r["regime"]), float(r["weight"])) for r in d.get("regimes", []))
        return cls(int(d["app_count"]), regimes, int(d.get("seed", 0)), int(d.get("launch_window", 0)))

    def to_dict(self) -> dict:
        return {
            "app_count": self.app_count,
            "seed": self.seed,
            "launch_window": self.launch_window,
            "regimes": [{"regime": asdict(r), "weight": w} for r, w in self.regimes],
        }

    @classmethod
    def from_json(cls, path) -> "EcosystemSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def draw_lifetimes(rng, size, a: float, xa: float) -> np.ndarray:
    """Continuous lifetimes with survival exp(-xa t^(1-a) / (1-a))."""
    e = rng.exponential(1.0, size)
    return ((1 - a) * e / xa) ** (1.0 / (1 - a))


def _affinity(attributes: AttributeTable | None, regime: AppRegime, n: int) -> np.ndarray:
    aff = np.ones(n)
    if attributes is None or regime.affinity_boost == 1.0:
        return aff
    match = np.ones(n, dtype=bool)
    targeted = False
    if regime.target_country is not None:
        match &= attributes.country == regime.target_country
        targeted = True
    if regime.target_age is not None:
        match &= np.abs(attributes.age - regime.target_age) <= 5
        targeted = True
    if targeted:
        aff[match] = regime.affinity_boost
    return aff


def _gather_neighbors(graph: SocialGraph, nodes: np.ndarray) -> np.ndarray:
    if not len(nodes):
        return np.zeros(0, dtype=np.int64)
    starts = graph.indptr[nodes]
    lens = graph.indptr[nodes + 1] - starts
    offs = np.repeat(starts - np.r_[0, np.cumsum(lens)[:-1]], lens)
    return graph.indices[np.arange(lens.sum()) + offs]


def _forest_deficit(graph: SocialGraph, u: int, adopted: np.ndarray, n_edges: int) -> int:
    """Edges minus spanning-forest edges of the subgraph induced on u's adopter friends."""
    friends = graph.neighbors(u)
    friends = friends[adopted[friends]]
    parent = {int(v): int(v) for v in friends}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    merged = 0
    for v in friends:
        nb = graph.neighbors(v)
        nb = nb[(nb > v) & adopted[nb]]
        for w in nb:
            w = int(w)
            if w in parent:
                rv, rw = find(int(v)), find(w)
                if rv != rw:
                    parent[rv] = rw
                    merged += 1
    return n_edges - merged


def simulate_app(graph: SocialGraph, attributes: AttributeTable | None, regime: AppRegime,
                 seed=0, launch_day: int = 0, horizon: int | None = None) -> AppEvents:
    """Agent-level daily simulation of one app; returns its (user, day) events."""
    rng = np.random.default_rng(seed)
    horizon = regime.horizon if horizon is None else horizon
    n = graph.node_count
    aff = _affinity(attributes, regime, n)
    susceptible = rng.random(n) < regime.susceptible_frac if regime.susceptible_frac < 1 else np.ones(n, bool)
    base_hazard = regime.alpha * aff

    adopted = np.zeros(n, dtype=bool)
    friend_count = np.zeros(n, dtype=np.int64)
    mode = regime.social_mode
    track_edges = mode in ("edges", "components") and regime.beta > 0
    friend_edges = np.zeros(n, dtype=np.int64) if track_edges else None
    deficit = np.zeros(n, dtype=np.int64) if track_edges else None
    react_on = regime.reactivation_eps > 0

    ad_users = np.zeros(0, dtype=np.int64)
    ad_day = np.zeros(0, dtype=np.int64)
    ad_life = np.zeros(0, dtype=float)
    active_prev = np.zeros(n, dtype=bool)
    out_u, out_d = [], []

    for day in range(launch_day, horizon):
        # returning users
        if len(ad_users):
            offset = day - ad_day
            alive = offset <= ad_life
            act = alive & (rng.random(len(ad_users)) < regime.engagement_rho)
            if react_on:
                dead = ~alive
                if dead.any():
                    has_friend = graph.neighbor_sum(active_prev.astype(np.int64)) > 0
                    react = dead & has_friend[ad_users] & (rng.random(len(ad_users)) < regime.reactivation_eps)
                    act |= react
            returning = ad_users[act]
        else:
            returning = ad_users

        # adoption
        hazard = base_hazard
        if regime.beta > 0:
            if mode == "count":
                g = friend_count
            elif mode == "edges":
                g = friend_count + friend_edges
            else:
                g = friend_count - friend_edges + deficit
            hazard = base_hazard + regime.beta * g
        draw = rng.random(n)
        new = np.flatnonzero((draw < np.minimum(hazard, 1.0)) & ~adopted & susceptible)

        if len(new):
            adopted[new] = True
            ad_users = np.concatenate([ad_users, new])
            ad_day = np.concatenate([ad_day, np.full(len(new), day)])
            ad_life = np.concatenate([ad_life, draw_lifetimes(rng, len(new), regime.retention_a, regime.retention_xa)])
            if regime.beta > 0:
                np.add.at(friend_count, _gather_neighbors(graph, new), 1)
                if track_edges:
                    _update_friend_edges(graph, new, adopted, friend_edges, deficit, mode == "components")

        today = np.concatenate([returning, new])
        if len(today):
            out_u.append(today)
            out_d.append(np.full(len(today), day, dtype=np.int64))
        if react_on:
            active_prev[:] = False
            active_prev[today] = True

    if out_u:
        return AppEvents.from_pairs(np.concatenate(out_u), np.concatenate(out_d))
    return AppEvents.from_pairs([], [])


def _update_friend_edges(graph, new, adopted, friend_edges, deficit, exact_components):
    # new adopters are already flagged in `adopted`; count each new adopter-adopter edge once
    is_new = np.zeros(graph.node_count, dtype=bool)
    is_new[new] = True
    touched = []
    for v in new:
        nv = graph.neighbors(v)
        ws = nv[adopted[nv]]
        ws = ws[~is_new[ws] | (ws > v)]
        for w in ws:
            common = np.intersect1d(nv, graph.neighbors(w), assume_unique=True)
            if len(common):
                friend_edges[common] += 1
                touched.append(common)
    if exact_components:
        # any graph with <= 2 edges is a forest; only recheck nodes that may hold a cycle
        cand = _gather_neighbors(graph, new)
        if touched:
            cand = np.concatenate([cand] + touched)
        cand = np.unique(cand)
        cand = cand[(friend_edges[cand] >= 3) & ~adopted[cand]]
        for u in cand:
            deficit[u] = _forest_deficit(graph, int(u), adopted, int(friend_edges[u]))


def simulate_cohort(n_users: int, regime: AppRegime, seed=0, adoption_spread: int = 1,
                    horizon: int | None = None) -> AppEvents:
    """Graph-free cohort: users adopt on uniform days in [0, adoption_spread) and then
    follow the planted lifetime and engagement law (no reactivation)."""
    rng = np.random.default_rng(seed)
    horizon = regime.horizon if horizon is None else horizon
    start = rng.integers(0, adoption_spread, size=n_users)
    life = draw_lifetimes(rng, n_users, regime.retention_a, regime.retention_xa)
    last_off = np.minimum(np.floor(np.minimum(life, horizon)).astype(np.int64), horizon - 1 - start)
    last_off = np.maximum(last_off, 0)
    # offsets 1..last_off each active with probability rho
    counts = last_off
    users = np.repeat(np.arange(n_users), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts) + 1
    keep = rng.random(len(offs)) < regime.engagement_rho
    users = np.concatenate([np.arange(n_users), users[keep]])
    days = np.concatenate([start, start[users[n_users:]] + offs[keep]])
    return AppEvents.from_pairs(users, days)


@dataclass
class Ecosystem:
    graph: SocialGraph
    attributes: AttributeTable
    log: ActivityLog
    ground_truth: dict = field(default_factory=dict)  # app_id -> regime name
    launch_days: dict = field(default_factory=dict)


def _plan(spec: EcosystemSpec, app: int):
    rng = substream(spec.seed, app)
    k = int(rng.choice(len(spec.regimes), p=spec.weights))
    launch = int(rng.integers(0, spec.launch_window + 1)) if spec.launch_window else 0
    app_seed = int(rng.integers(0, 2**63 - 1))
    return k, launch, app_seed


def _simulate_one(args):
    graph, attributes, regime, seed, launch, horizon = args
    return simulate_app(graph, attributes, regime, seed=seed, launch_day=launch, horizon=horizon)


def simulate_ecosystem(spec: EcosystemSpec, graph: SocialGraph, attributes: AttributeTable | None,
                       workers: int = 1) -> Ecosystem:
    """Simulate ``spec.app_count`` apps; app ids are ``0..app_count-1``.

    Each app's randomness comes from a substream of (spec.seed, app id), so the
    result does not depend on ``workers``.
    """
    horizon = spec.horizon
    plans = [_plan(spec, i) for i in range(spec.app_count)]
    jobs = [(graph, attributes, spec.regimes[k][0], s, launch, horizon) for k, launch, s in plans]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_simulate_one(j) for j in jobs]
    apps = {i: ev for i, ev in enumerate(results)}
    truth = {i: spec.regimes[k][0].name for i, (k, _, _) in enumerate(plans)}
    launches = {i: launch for i, (_, launch, _) in enumerate(plans)}
    return Ecosystem(graph, attributes, ActivityLog(apps, horizon), truth, launches)
