"""Continuous-time dynamic graph data model.

An :class:`EventStream` stores interaction events column-wise (numpy arrays)
sorted by time; :class:`TemporalGraph` indexes it for time-bounded
neighbourhood lookups.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterator, TextIO

import numpy as np


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class Event:
    source: int
    dest: int
    time: float
    features: tuple[float, ...] = ()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class EventStream:
    """Immutable time-ordered event table.

    ``meta`` carries provenance: the original node ids (``node_ids``), the
    time rescaling (``time_offset``/``time_scale``) and anything else a
    producer wants to keep.
    """

    def __init__(self, src, dst, t, features=None, node_count: int | None = None,
                 meta: dict | None = None, check_sorted: bool = True):
        src = np.asarray(src, dtype=np.int64).reshape(-1)
        dst = np.asarray(dst, dtype=np.int64).reshape(-1)
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        if not (len(src) == len(dst) == len(t)):
            raise DataError("source/dest/time columns differ in length")
        if features is None:
            features = np.zeros((len(t), 0))
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(t):
            raise DataError(f"feature matrix shape {features.shape} does not match {len(t)} events")
        if len(t) and (not np.all(np.isfinite(t)) or t.min() < 0):
            raise DataError("times must be finite and non-negative")
        if len(src) and min(src.min(), dst.min()) < 0:
            raise DataError("node ids must be non-negative")
        if check_sorted and len(t) > 1 and np.any(np.diff(t) < 0):
            raise DataError("events are not sorted by time")
        inferred = int(max(src.max(), dst.max()) + 1) if len(src) else 0
        if node_count is None:
            node_count = inferred
        elif node_count < inferred:
            raise DataError(f"node_count {node_count} smaller than max id + 1 = {inferred}")
        self.src, self.dst, self.t = _frozen(src), _frozen(dst), _frozen(t)
        self.features = _frozen(features)
        self.node_count = int(node_count)
        self.meta = dict(meta or {})

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self.event(i)

    def event(self, i: int) -> Event:
        return Event(int(self.src[i]), int(self.dst[i]), float(self.t[i]),
                     tuple(float(x) for x in self.features[i]))

    @property
    def events(self) -> list[Event]:
        return list(self)

    def slice(self, start: int, stop: int) -> "EventStream":
        return EventStream(self.src[start:stop], self.dst[start:stop], self.t[start:stop],
                           self.features[start:stop], self.node_count, self.meta)

    def select(self, mask: np.ndarray) -> "EventStream":
        return EventStream(self.src[mask], self.dst[mask], self.t[mask], self.features[mask],
                           self.node_count, self.meta)

    def with_features(self, features: np.ndarray) -> "EventStream":
        return EventStream(self.src, self.dst, self.t, features, self.node_count, self.meta)

    def with_times(self, t: np.ndarray, meta: dict | None = None) -> "EventStream":
        return EventStream(self.src, self.dst, t, self.features, self.node_count,
                           {**self.meta, **(meta or {})})

    def restrict(self, nodes) -> "EventStream":
        """Events whose both endpoints lie in ``nodes``."""
        members = np.zeros(self.node_count, dtype=bool)
        members[np.asarray(sorted(nodes), dtype=np.int64)] = True
        return self.select(members[self.src] & members[self.dst])

    @classmethod
    def concat(cls, parts: list["EventStream"]) -> "EventStream":
        parts = [p for p in parts if p is not None]
        n = max(p.node_count for p in parts)
        return cls(np.concatenate([p.src for p in parts]), np.concatenate([p.dst for p in parts]),
                   np.concatenate([p.t for p in parts]),
                   np.concatenate([p.features for p in parts]), n, parts[0].meta)

    def original_id(self, node: int) -> int:
        ids = self.meta.get("node_ids")
        return int(ids[node]) if ids is not None else int(node)

    def to_csv(self, fh: TextIO, original_ids: bool = True, raw_time: bool = True) -> None:
        fh.write(",".join(["source", "dest", "time"] + [f"f{i}" for i in range(self.feature_dim)]) + "\n")
        times = self.raw_times() if raw_time else self.t
        for i in range(len(self)):
            u, v = int(self.src[i]), int(self.dst[i])
            if original_ids:
                u, v = self.original_id(u), self.original_id(v)
            row = [str(u), str(v), repr(float(times[i]))] + [repr(float(x)) for x in self.features[i]]
            fh.write(",".join(row) + "\n")

    def raw_times(self) -> np.ndarray:
        off = self.meta.get("time_offset", 0.0)
        scale = self.meta.get("time_scale", 1.0)
        return self.t / scale + off


# ---------------------------------------------------------------------------
# ingestion


def ingest_events(text: str | TextIO, compact_ids: bool = True) -> EventStream:
    """Parse ``source,dest,time[,f0,...]`` CSV into a sorted stream.

    Rows are stably sorted by time.  With ``compact_ids`` node ids are
    remapped to ``0..node_count-1`` in ascending order of the original id;
    the originals are kept in ``meta["node_ids"]``.
    """
    fh = io.StringIO(text) if isinstance(text, str) else text
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("line 1: empty input, expected header source,dest,time[,f...]") from None
    header = [h.strip() for h in header]
    if header[:3] != ["source", "dest", "time"]:
        raise DataError(f"line 1: header must start with source,dest,time; got {','.join(header)}")
    n_feat = len(header) - 3
    src, dst, t, feats = [], [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3 + n_feat:
            raise DataError(f"line {lineno}: expected {3 + n_feat} fields, got {len(row)}")
        try:
            u, v = int(row[0]), int(row[1])
            ts = float(row[2])
            f = [float(x) for x in row[3:]]
        except ValueError:
            raise DataError(f"line {lineno}: malformed row {','.join(row)!r}") from None
        if u < 0 or v < 0:
            raise DataError(f"line {lineno}: negative node id")
        if not np.isfinite(ts):
            raise DataError(f"line {lineno}: non-finite time")
        if ts < 0:
            raise DataError(f"line {lineno}: negative time {ts}")
        src.append(u)
        dst.append(v)
        t.append(ts)
        feats.append(f)
    src_a = np.asarray(src, dtype=np.int64)
    dst_a = np.asarray(dst, dtype=np.int64)
    t_a = np.asarray(t, dtype=np.float64)
    f_a = np.asarray(feats, dtype=np.float64).reshape(len(t), n_feat)
    order = np.argsort(t_a, kind="stable")
    src_a, dst_a, t_a, f_a = src_a[order], dst_a[order], t_a[order], f_a[order]
    meta: dict = {}
    if compact_ids and len(src_a):
        ids, inv = np.unique(np.concatenate([src_a, dst_a]), return_inverse=True)
        src_a, dst_a = inv[:len(src_a)], inv[len(src_a):]
        meta["node_ids"] = ids.tolist()
        node_count = len(ids)
    else:
        node_count = None
    return EventStream(src_a, dst_a, t_a, f_a, node_count, meta)


def rescale_times(stream: EventStream, span: float = 1000.0) -> EventStream:
    """Affinely map the stream's times onto [0, span]; the map is kept in meta."""
    if len(stream) == 0:
        return stream
    lo, hi = float(stream.t[0]), float(stream.t[-1])
    scale = span / (hi - lo) if hi > lo else 1.0
    prev_off = stream.meta.get("time_offset", 0.0)
    prev_scale = stream.meta.get("time_scale", 1.0)
    new_t = (stream.t - lo) * scale
    # raw = t / scale_total + offset_total
    return stream.with_times(new_t, {"time_offset": prev_off + lo / prev_scale,
                                     "time_scale": prev_scale * scale})


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.15
    test_frac: float = 0.15

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if any(f < 0 or f > 1 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must lie in [0,1] and sum to 1, got {fr}")


def split_boundaries(n: int, spec: SplitSpec) -> tuple[int, int]:
    n_train = int(np.floor(spec.train_frac * n + 1e-9))
    n_val = int(np.floor(spec.val_frac * n + 1e-9))
    return n_train, n_train + n_val


def chronological_split(stream: EventStream, spec: SplitSpec = SplitSpec()
                        ) -> tuple[EventStream, EventStream, EventStream]:
    """Train/val/test by event index: floor(train*T), floor(val*T), remainder."""
    if len(stream) == 0:
        raise DataError("cannot split an empty stream")
    a, b = split_boundaries(len(stream), spec)
    return stream.slice(0, a), stream.slice(a, b), stream.slice(b, len(stream))


def split_metadata(stream: EventStream, spec: SplitSpec) -> dict:
    a, b = split_boundaries(len(stream), spec)
    return {
        "fractions": {"train": spec.train_frac, "val": spec.val_frac, "test": spec.test_frac},
        "boundaries": {"train_end": a, "val_end": b, "n_events": len(stream)},
        "time_rescaling": {"offset": stream.meta.get("time_offset", 0.0),
                           "scale": stream.meta.get("time_scale", 1.0)},
    }


# ---------------------------------------------------------------------------
# edge features

_RADIX = (86400.0, 3600.0, 60.0, 1.0)


def _dhms(delta: float) -> list[float]:
    out = []
    rest = float(delta)
    for unit in _RADIX[:-1]:
        q = np.floor(rest / unit)
        out.append(q)
        rest -= q * unit
    out.append(rest)
    return out


def synthesize_edge_features(stream: EventStream) -> EventStream:
    """Attach the 10-d degree / recency feature to every event.

    [deg(u), deg(v), days, hours, minutes, seconds since u's previous
    event, the same four for v]; degrees count earlier incident events.
    Times are interpreted as seconds.
    """
    if stream.feature_dim != 0:
        raise DataError("stream already carries edge features")
    deg = np.zeros(stream.node_count, dtype=np.int64)
    last = np.full(stream.node_count, np.nan)
    times = stream.raw_times()
    feats = np.zeros((len(stream), 10))
    for i in range(len(stream)):
        u, v, t = int(stream.src[i]), int(stream.dst[i]), float(times[i])
        du = 0.0 if np.isnan(last[u]) else t - last[u]
        dv = 0.0 if np.isnan(last[v]) else t - last[v]
        feats[i] = [deg[u], deg[v], *_dhms(du), *_dhms(dv)]
        deg[u] += 1
        if v != u:
            deg[v] += 1
        last[u] = t
        last[v] = t
    return stream.with_features(feats)


# ---------------------------------------------------------------------------
# temporal graph


@dataclass(frozen=True)
class NeighborEntry:
    node: int          # node the sampled event was found on
    neighbor: int
    dt: float          # t_src - t_event
    event: int
    features: np.ndarray = field(repr=False)


class TemporalGraph:
    """Per-node adjacency lists of (neighbor, time, event index), time-sorted."""

    def __init__(self, stream: EventStream):
        self.stream = stream
        n = stream.node_count
        ends = np.concatenate([stream.src, stream.dst])
        other = np.concatenate([stream.dst, stream.src])
        eidx = np.concatenate([np.arange(len(stream))] * 2)
        # self-loops are listed once
        keep = np.ones(len(ends), dtype=bool)
        keep[len(stream):] = stream.src != stream.dst
        ends, other, eidx = ends[keep], other[keep], eidx[keep]
        order = np.lexsort((eidx, ends))
        ends, other, eidx = ends[order], other[order], eidx[order]
        bounds = np.searchsorted(ends, np.arange(n + 1))
        self._nbr = [other[bounds[i]:bounds[i + 1]] for i in range(n)]
        self._eid = [eidx[bounds[i]:bounds[i + 1]] for i in range(n)]
        self._time = [stream.t[e] for e in self._eid]

    @property
    def node_count(self) -> int:
        return self.stream.node_count

    def degree(self, node: int) -> int:
        return len(self._eid[node])

    def recent(self, node: int, t_src: float, fanout: int, rng: np.random.Generator | None = None
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Up to ``fanout`` events on ``node`` strictly before ``t_src``.

        Returns (neighbors, event times, event indices), most recent first.
        With ``rng`` a uniform sample without replacement is drawn instead.
        """
        times = self._time[node]
        k = int(np.searchsorted(times, t_src, side="left"))
        if k == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, np.zeros(0), empty
        if rng is None:
            sel = np.arange(k - 1, max(k - fanout, 0) - 1, -1)
        else:
            sel = np.sort(rng.choice(k, size=min(fanout, k), replace=False))[::-1]
        return self._nbr[node][sel], times[sel], self._eid[node][sel]

    def static_neighbors(self, node: int, t_src: float) -> set[int]:
        k = int(np.searchsorted(self._time[node], t_src, side="left"))
        return set(int(x) for x in self._nbr[node][:k])


def temporal_neighbors(graph: TemporalGraph, node: int, t_src: float, hops: int = 2,
                       fanout: int = 15, rng: np.random.Generator | None = None
                       ) -> list[list[NeighborEntry]]:
    """Layered neighbourhood sample; every hop is bounded by the same ``t_src``.

    Layer 1 holds up to ``fanout`` events on ``node``; layer k holds up to
    ``fanout`` events on each neighbour reached in layer k-1.
    """
    if hops < 1 or fanout < 1:
        raise ValueError("hops and fanout must be >= 1")
    feats = graph.stream.features
    layers: list[list[NeighborEntry]] = []
    frontier = [node]
    for _ in range(hops):
        layer = []
        for x in frontier:
            nbr, ts, eid = graph.recent(x, t_src, fanout, rng)
            for j, tj, e in zip(nbr, ts, eid):
                layer.append(NeighborEntry(int(x), int(j), float(t_src - tj), int(e), feats[e]))
        layers.append(layer)
        frontier = [e.neighbor for e in layer]
    return layers


def hop_distances(graph: TemporalGraph, source: int, t_src: float, max_hops: int) -> dict[int, int]:
    """BFS distances up to ``max_hops`` on the static projection of events before t_src."""
    dist = {source: 0}
    frontier = [source]
    for d in range(1, max_hops + 1):
        nxt = []
        for x in frontier:
            for y in sorted(graph.static_neighbors(x, t_src)):
                if y not in dist:
                    dist[y] = d
                    nxt.append(y)
        frontier = nxt
    return dist


# ---------------------------------------------------------------------------
# communities


@dataclass(frozen=True)
class CommunityAssignment:
    community_of: dict[int, int]
    communities: list[frozenset[int]]

    def __post_init__(self):
        seen: set[int] = set()
        for q, c in enumerate(self.communities):
            if not c:
                raise ValueError(f"community {q} is empty")
            if seen & c:
                raise ValueError("communities overlap")
            seen |= c
            for v in c:
                if self.community_of.get(v) != q:
                    raise ValueError(f"node {v} mapping disagrees with community {q}")
        if seen != set(self.community_of):
            raise ValueError("community_of and communities cover different nodes")

    @classmethod
    def from_labels(cls, labels: dict[int, int]) -> "CommunityAssignment":
        """Build from arbitrary labels; communities are renumbered by smallest member."""
        groups: dict[int, set[int]] = {}
        for v, c in labels.items():
            groups.setdefault(c, set()).add(int(v))
        ordered = sorted((frozenset(g) for g in groups.values()), key=min)
        of = {v: q for q, g in enumerate(ordered) for v in g}
        return cls(of, ordered)

    def members(self, q: int) -> list[int]:
        return sorted(self.communities[q])

    def to_csv(self, fh: TextIO, stream: EventStream | None = None) -> None:
        fh.write("node,community\n")
        for v in sorted(self.community_of):
            out = stream.original_id(v) if stream is not None else v
            fh.write(f"{out},{self.community_of[v]}\n")

    @classmethod
    def from_csv(cls, fh: TextIO, stream: EventStream | None = None) -> "CommunityAssignment":
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node", "community"]:
            raise DataError("line 1: expected header node,community")
        lookup = None
        if stream is not None and stream.meta.get("node_ids") is not None:
            lookup = {int(o): i for i, o in enumerate(stream.meta["node_ids"])}
        labels = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                node, comm = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise DataError(f"line {lineno}: malformed row") from None
            if lookup is not None:
                if node not in lookup:
                    raise DataError(f"line {lineno}: unknown node {node}")
                node = lookup[node]
            labels[node] = comm
        return cls.from_labels(labels)


def pair_weights(stream: EventStream) -> dict[tuple[int, int], float]:
    """Undirected interaction counts keyed by (min, max) node pair."""
    w: dict[tuple[int, int], float] = {}
    for u, v in zip(stream.src.tolist(), stream.dst.tolist()):
        key = (u, v) if u <= v else (v, u)
        w[key] = w.get(key, 0.0) + 1.0
    return w


def stream_to_json_meta(stream: EventStream) -> str:
    return json.dumps(stream.meta, sort_keys=True)
