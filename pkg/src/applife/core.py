"""Graphs, user attributes and daily activity logs.

Everything here is immutable once built.  Node ids are integers ``0..n-1``;
days are integer offsets from the dataset epoch (day 0).
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_DEGREE_CAP = 5000


class DataError(ValueError):
    """Malformed input data (bad row, violated invariant)."""


class DegreeCapError(DataError):
    pass


class UnknownAppError(KeyError):
    pass


# ---------------------------------------------------------------------------
# social graph


class SocialGraph:
    """Undirected simple graph stored as a canonical edge list plus CSR adjacency."""

    def __init__(self, node_count: int, edges=None, degree_cap: int = DEFAULT_DEGREE_CAP):
        edges = np.zeros((0, 2), dtype=np.int64) if edges is None else np.asarray(edges, dtype=np.int64)
        edges = edges.reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= node_count):
            raise DataError("edge endpoint outside node range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise DataError("self-loop")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        canon = np.unique(np.stack([lo, hi], axis=1), axis=0) if len(edges) else edges
        self.node_count = int(node_count)
        self.degree_cap = int(degree_cap)
        self.edges = canon
        self.edges.setflags(write=False)

        deg = np.bincount(canon.ravel(), minlength=node_count) if len(canon) else np.zeros(node_count, dtype=np.int64)
        if len(deg) and deg.max() > degree_cap:
            bad = int(np.argmax(deg))
            raise DegreeCapError(f"node {bad} has degree {deg[bad]} > cap {degree_cap}")
        self.degree = deg
        src = np.concatenate([canon[:, 0], canon[:, 1]])
        dst = np.concatenate([canon[:, 1], canon[:, 0]])
        order = np.lexsort((dst, src))
        self.indices = dst[order]
        self.indptr = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(deg, out=self.indptr[1:])
        for a in (self.degree, self.indices, self.indptr):
            a.setflags(write=False)
        self._adj = None

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        nb = self.neighbors(u)
        i = np.searchsorted(nb, v)
        return bool(i < len(nb) and nb[i] == v)

    def adjacency(self):
        """scipy CSR adjacency matrix (int64, symmetric)."""
        if self._adj is None:
            from scipy.sparse import csr_matrix

            data = np.ones(len(self.indices), dtype=np.int64)
            n = self.node_count
            self._adj = csr_matrix((data, self.indices, self.indptr), shape=(n, n))
        return self._adj

    def neighbor_sum(self, values: np.ndarray) -> np.ndarray:
        """Sum of ``values`` over each node's neighbours."""
        return self.adjacency() @ values

    def __eq__(self, other):
        return (
            isinstance(other, SocialGraph)
            and self.node_count == other.node_count
            and np.array_equal(self.edges, other.edges)
        )

    def __repr__(self):
        return f"SocialGraph(nodes={self.node_count}, edges={self.edge_count}, cap={self.degree_cap})"


def load_graph(path, degree_cap: int = DEFAULT_DEGREE_CAP, node_count: int | None = None) -> SocialGraph:
    """Read a ``user_a,user_b`` CSV.  Symmetric duplicates collapse to one edge."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is not None and [h.strip() for h in header] != ["user_a", "user_b"]:
            raise DataError(f"bad graph header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"line {lineno}: expected 2 fields, got {len(row)}")
            try:
                a, b = int(row[0]), int(row[1])
            except ValueError:
                raise DataError(f"line {lineno}: non-integer id in {row!r}") from None
            if a == b:
                raise DataError(f"line {lineno}: self-loop {a},{b}")
            if a < 0 or b < 0:
                raise DataError(f"line {lineno}: negative id")
            rows.append((a, b))
    edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
    n = node_count if node_count is not None else (int(edges.max()) + 1 if len(edges) else 0)
    return SocialGraph(n, edges, degree_cap=degree_cap)


def graph_to_csv(graph: SocialGraph) -> str:
    buf = io.StringIO()
    buf.write("user_a,user_b\n")
    for a, b in graph.edges:
        buf.write(f"{a},{b}\n")
    return buf.getvalue()


def save_graph(graph: SocialGraph, path) -> None:
    Path(path).write_text(graph_to_csv(graph))


# ---------------------------------------------------------------------------
# attributes


@dataclass(frozen=True)
class UserAttributes:
    country: str
    gender: str
    age: int
    fb_active_days_of_7: int
    is_mau: bool

    def __post_init__(self):
        if not 0 <= self.fb_active_days_of_7 <= 7:
            raise DataError("fb_active_days_of_7 outside 0..7")
        if self.age < 0:
            raise DataError("negative age")


@dataclass(frozen=True)
class AttributeTable:
    """Column-oriented attributes for users ``0..n-1``."""

    country: np.ndarray
    gender: np.ndarray
    age: np.ndarray
    fb_l7: np.ndarray
    is_mau: np.ndarray

    def __post_init__(self):
        n = len(self.country)
        for name in ("gender", "age", "fb_l7", "is_mau"):
            if len(getattr(self, name)) != n:
                raise DataError(f"attribute column {name} has wrong length")
        if n and (self.fb_l7.min() < 0 or self.fb_l7.max() > 7):
            raise DataError("fb_l7 outside 0..7")
        if n and self.age.min() < 0:
            raise DataError("negative age")

    def __len__(self):
        return len(self.country)

    def user(self, u: int) -> UserAttributes:
        return UserAttributes(str(self.country[u]), str(self.gender[u]), int(self.age[u]),
                              int(self.fb_l7[u]), bool(self.is_mau[u]))


def attributes_to_csv(attrs: AttributeTable) -> str:
    buf = io.StringIO()
    buf.write("user_id,country,gender,age,fb_l7,is_mau\n")
    for u in range(len(attrs)):
        buf.write(f"{u},{attrs.country[u]},{attrs.gender[u]},{int(attrs.age[u])},"
                  f"{int(attrs.fb_l7[u])},{int(bool(attrs.is_mau[u]))}\n")
    return buf.getvalue()


def save_attributes(attrs: AttributeTable, path) -> None:
    Path(path).write_text(attributes_to_csv(attrs))


def load_attributes(path) -> AttributeTable:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["user_id", "country", "gender", "age", "fb_l7", "is_mau"]
        if reader.fieldnames != expected:
            raise DataError(f"bad attributes header {reader.fieldnames!r}")
        recs = []
        for row in reader:
            try:
                recs.append((int(row["user_id"]), row["country"], row["gender"], int(row["age"]),
                             int(row["fb_l7"]), row["is_mau"].strip() in ("1", "true", "True")))
            except (TypeError, ValueError):
                raise DataError(f"bad attribute row {row!r}") from None
    recs.sort()
    if [r[0] for r in recs] != list(range(len(recs))):
        raise DataError("attribute user ids must be exactly 0..n-1")
    cols = list(zip(*recs)) if recs else [[]] * 6
    return AttributeTable(
        country=np.array(cols[1], dtype=str),
        gender=np.array(cols[2], dtype=str),
        age=np.array(cols[3], dtype=np.int64),
        fb_l7=np.array(cols[4], dtype=np.int64),
        is_mau=np.array(cols[5], dtype=bool),
    )


# ---------------------------------------------------------------------------
# activity


@dataclass(frozen=True)
class Day:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("day index must be >= 0")

    def __int__(self):
        return self.index


@dataclass(frozen=True)
class UserSpan:
    user: int
    first: int
    last: int

    def __post_init__(self):
        if self.first > self.last:
            raise ValueError("first > last")


@dataclass(frozen=True)
class AppEvents:
    """Deduplicated (user, day) events of one app, sorted by user then day."""

    users: np.ndarray
    days: np.ndarray

    @classmethod
    def from_pairs(cls, users, days) -> "AppEvents":
        users = np.asarray(users, dtype=np.int64)
        days = np.asarray(days, dtype=np.int64)
        if len(users):
            key = np.unique(users * (1 << 32) + days)
            users, days = key >> 32, key & 0xFFFFFFFF
        for a in (users, days):
            a.setflags(write=False)
        return cls(users, days)

    def __len__(self):
        return len(self.users)

    def first_days(self) -> tuple[np.ndarray, np.ndarray]:
        """(distinct users, first event day of each)."""
        if not len(self.users):
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        start = np.r_[True, self.users[1:] != self.users[:-1]]
        return self.users[start], self.days[start]

    def last_days(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.users):
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        end = np.r_[self.users[1:] != self.users[:-1], True]
        return self.users[end], self.days[end]

    def until(self, day: int) -> "AppEvents":
        keep = self.days <= day
        return AppEvents(self.users[keep], self.days[keep])


@dataclass(frozen=True)
class ActivityLog:
    """Per-app activity events over days ``0..horizon-1``."""

    apps: dict = field(default_factory=dict)
    horizon: int = 0

    def __post_init__(self):
        for app, ev in self.apps.items():
            if len(ev) and (ev.days.min() < 0 or ev.days.max() >= self.horizon):
                raise DataError(f"app {app}: event day outside horizon 0..{self.horizon - 1}")

    @classmethod
    def from_records(cls, records, horizon: int | None = None) -> "ActivityLog":
        """Build from an iterable/array of (app, user, day) rows."""
        arr = np.asarray(list(records) if not isinstance(records, np.ndarray) else records, dtype=np.int64)
        arr = arr.reshape(-1, 3)
        if horizon is None:
            horizon = int(arr[:, 2].max()) + 1 if len(arr) else 0
        apps = {}
        for app in np.unique(arr[:, 0]):
            sel = arr[:, 0] == app
            apps[int(app)] = AppEvents.from_pairs(arr[sel, 1], arr[sel, 2])
        return cls(apps, horizon)

    def events(self, app) -> AppEvents:
        try:
            return self.apps[app]
        except KeyError:
            raise UnknownAppError(app) from None

    @property
    def app_ids(self) -> list:
        return sorted(self.apps)

    def truncate(self, last_day: int) -> "ActivityLog":
        """Log restricted to days ``0..last_day``."""
        return ActivityLog({a: ev.until(last_day) for a, ev in self.apps.items()}, last_day + 1)

    def __eq__(self, other):
        if not isinstance(other, ActivityLog) or self.horizon != other.horizon:
            return False
        if self.app_ids != other.app_ids:
            return False
        return all(np.array_equal(self.apps[a].users, other.apps[a].users)
                   and np.array_equal(self.apps[a].days, other.apps[a].days) for a in self.apps)


def log_to_csv(log_: ActivityLog) -> str:
    parts = ["app_id,user_id,day\n"]
    for app in log_.app_ids:
        ev = log_.apps[app]
        if len(ev):
            block = np.column_stack([np.full(len(ev), app), ev.users, ev.days])
            s = io.StringIO()
            np.savetxt(s, block, fmt="%d", delimiter=",")
            parts.append(s.getvalue())
    return "".join(parts)


def save_log(log_: ActivityLog, path) -> None:
    Path(path).write_text(log_to_csv(log_))


def load_log(path, horizon: int | None = None) -> ActivityLog:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "app_id,user_id,day":
            raise DataError(f"bad activity header {header!r}")
        body = fh.read()
    if not body.strip():
        return ActivityLog({}, horizon or 0)
    try:
        arr = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.int64, ndmin=2)
    except ValueError as exc:
        raise DataError(f"malformed activity row: {exc}") from None
    if arr.shape[1] != 3:
        raise DataError("activity rows need 3 fields")
    if arr.min() < 0:
        raise DataError("negative id or day")
    return ActivityLog.from_records(arr, horizon)


# ---------------------------------------------------------------------------
# aggregations


def _check_window(log_: ActivityLog, window_end: int, window_len: int):
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    # windows may start before day 0; they then cover days 0..window_end
    if not 0 <= window_end < log_.horizon:
        raise ValueError(f"window end {window_end} outside horizon {log_.horizon}")


def active_users(log_: ActivityLog, app, window_end: int, window_len: int) -> int:
    """Distinct users with an event in days ``window_end-window_len+1 .. window_end``."""
    _check_window(log_, window_end, window_len)
    ev = log_.events(app)
    sel = (ev.days <= window_end) & (ev.days > window_end - window_len)
    return int(len(np.unique(ev.users[sel])))


def active_series(ev: AppEvents, horizon: int, window_len: int) -> np.ndarray:
    """Trailing-window distinct-user counts for every day ``0..horizon-1``.

    A user contributes to window-ends ``[d, d+len-1]`` for each event day d;
    overlapping ranges of the same user are merged so users count once.
    """
    out = np.zeros(horizon + window_len + 1, dtype=np.int64)
    if len(ev):
        u, d = ev.users, ev.days
        same = np.r_[False, u[1:] == u[:-1]]
        prev_end = np.r_[0, d[:-1] + window_len]
        start = np.where(same, np.maximum(d, prev_end), d)
        stop = d + window_len
        keep = (start < stop) & (start < horizon)
        np.add.at(out, start[keep], 1)
        np.add.at(out, np.minimum(stop[keep], len(out) - 1), -1)
    return np.cumsum(out)[:horizon]


def dau_series(ev: AppEvents, horizon: int) -> np.ndarray:
    return np.bincount(ev.days, minlength=horizon)[:horizon].astype(np.int64)


def user_spans(log_: ActivityLog, app) -> list[UserSpan]:
    ev = log_.events(app)
    users, first = ev.first_days()
    _, last = ev.last_days()
    return [UserSpan(int(u), int(f), int(l)) for u, f, l in zip(users, first, last)]


def first_last_matrix(spans, bin_days: int, n_days: int | None = None) -> np.ndarray:
    """Counts of users by (first-login bin, last-login bin)."""
    if bin_days < 1:
        raise ValueError("bin_days must be >= 1")
    first = np.array([s.first for s in spans], dtype=np.int64)
    last = np.array([s.last for s in spans], dtype=np.int64)
    if n_days is None:
        n_days = int(last.max()) + 1 if len(last) else 1
    nb = (n_days - 1) // bin_days + 1
    mat = np.zeros((nb, nb), dtype=np.int64)
    np.add.at(mat, (first // bin_days, last // bin_days), 1)
    return mat
