"""Deterministic Louvain community detection.

Modularity convention: Q = sum_c [L_c / m - (D_c / 2m)^2] where L_c is the
internal edge weight of community c (self-loops counted once), D_c its total
degree (self-loops counted twice) and m the total edge weight.
"""
from __future__ import annotations

from dataclasses import dataclass

from .ctdg import CommunityAssignment, EventStream, pair_weights

GAIN_TOL = 1e-12


@dataclass
class WeightedGraph:
    """Undirected weighted graph on nodes ``0..n-1``."""

    n: int
    adj: list[dict[int, float]]      # neighbour -> weight, no self entries
    loops: list[float]               # self-loop weight per node

    @classmethod
    def from_pairs(cls, n: int, weights: dict[tuple[int, int], float]) -> "WeightedGraph":
        adj: list[dict[int, float]] = [dict() for _ in range(n)]
        loops = [0.0] * n
        for (a, b), w in weights.items():
            if a == b:
                loops[a] += w
            else:
                adj[a][b] = adj[a].get(b, 0.0) + w
                adj[b][a] = adj[b].get(a, 0.0) + w
        return cls(n, adj, loops)

    def degree(self, i: int) -> float:
        return sum(self.adj[i].values()) + 2.0 * self.loops[i]

    def total_weight(self) -> float:
        return sum(sum(a.values()) for a in self.adj) / 2.0 + sum(self.loops)


def modularity(g: WeightedGraph, labels: list[int], resolution: float = 1.0) -> float:
    m = g.total_weight()
    if m == 0:
        return 0.0
    internal: dict[int, float] = {}
    degree: dict[int, float] = {}
    for i in range(g.n):
        c = labels[i]
        degree[c] = degree.get(c, 0.0) + g.degree(i)
        internal[c] = internal.get(c, 0.0) + g.loops[i]
        for j, w in g.adj[i].items():
            if j > i and labels[j] == c:
                internal[c] += w
    return sum(internal.get(c, 0.0) / m - resolution * (degree[c] / (2 * m)) ** 2 for c in degree)


def _local_moves(g: WeightedGraph, resolution: float) -> tuple[list[int], bool]:
    """Sweep nodes in ascending id until no single move gains more than GAIN_TOL."""
    m = g.total_weight()
    labels = list(range(g.n))
    if m == 0:
        return labels, False
    k = [g.degree(i) for i in range(g.n)]
    tot = list(k)
    moved_any = False
    while True:
        moved = False
        for i in range(g.n):
            own = labels[i]
            links: dict[int, float] = {}
            for j, w in g.adj[i].items():
                links[labels[j]] = links.get(labels[j], 0.0) + w
            tot[own] -= k[i]

            def gain(c: int) -> float:
                return links.get(c, 0.0) / m - resolution * k[i] * tot[c] / (2.0 * m * m)

            stay = gain(own)
            best_c, best_gain = own, stay
            for c in sorted(links):
                if c == own:
                    continue
                gc = gain(c)
                if gc > stay + GAIN_TOL and (best_c == own or gc > best_gain + GAIN_TOL):
                    best_c, best_gain = c, gc
            tot[best_c] += k[i]
            if best_c != own:
                labels[i] = best_c
                moved = moved_any = True
        if not moved:
            break
    return labels, moved_any


def _renumber(labels: list[int]) -> list[int]:
    first: dict[int, int] = {}
    for c in labels:
        if c not in first:
            first[c] = len(first)
    return [first[c] for c in labels]


def _aggregate(g: WeightedGraph, labels: list[int]) -> WeightedGraph:
    n = max(labels) + 1
    weights: dict[tuple[int, int], float] = {}
    for i in range(g.n):
        ci = labels[i]
        if g.loops[i]:
            weights[(ci, ci)] = weights.get((ci, ci), 0.0) + g.loops[i]
        for j, w in g.adj[i].items():
            if j < i:
                continue
            cj = labels[j]
            key = (ci, cj) if ci <= cj else (cj, ci)
            weights[key] = weights.get(key, 0.0) + w
    return WeightedGraph.from_pairs(n, weights)


def louvain(g: WeightedGraph, resolution: float = 1.0) -> tuple[list[int], WeightedGraph]:
    """Return node labels and the final aggregated graph."""
    node_labels = list(range(g.n))
    level = g
    while True:
        labels, moved = _local_moves(level, resolution)
        if not moved:
            break
        labels = _renumber(labels)
        node_labels = [labels[c] for c in node_labels]
        level = _aggregate(level, labels)
    return node_labels, level


def detect_communities_louvain(stream: EventStream, resolution: float = 1.0,
                               node_count: int | None = None) -> CommunityAssignment:
    """Louvain on the count-weighted static projection of ``stream``.

    Every node of the universe is assigned; nodes without events end up as
    singletons.
    """
    n = node_count if node_count is not None else stream.node_count
    g = WeightedGraph.from_pairs(n, pair_weights(stream))
    labels, _ = louvain(g, resolution)
    return CommunityAssignment.from_labels(dict(enumerate(labels)))


def graph_of(stream: EventStream) -> WeightedGraph:
    return WeightedGraph.from_pairs(stream.node_count, pair_weights(stream))
