"""Rollout graph bookkeeping and the message-passing + GRU state update."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import MLP, GRUCell, ParameterSet, Tensor
from .autodiff import ops as T
from .ctdg import TemporalGraph, hop_distances
from .encoder import TimeEncoder


@dataclass
class RolloutGraph:
    """Undirected edge multiset over community rows.

    ``edges`` entries are (row_a, row_b, time, provenance) where provenance
    is ``"history"`` for initial connectivity, ``"truth"`` for teacher-forced
    events and ``"predicted"`` for model output.  ``last`` holds the latest
    edge time per row pair and ``now`` the time of the latest edge added.
    """

    nodes: list[int]
    edges: list[tuple[int, int, float, str]] = field(default_factory=list)
    now: float = -np.inf

    def __post_init__(self):
        self.row = {v: i for i, v in enumerate(self.nodes)}
        n = len(self.nodes)
        self.counts = np.zeros((n, n))
        self.last = np.full((n, n), -np.inf)
        for a, b, t, _ in self.edges:
            self._bump(a, b, t)

    def _bump(self, a: int, b: int, t: float) -> None:
        self.counts[a, b] += 1
        if a != b:
            self.counts[b, a] += 1
        self.last[a, b] = self.last[b, a] = max(self.last[a, b], t)

    def ages(self) -> np.ndarray:
        """now - latest edge time per row pair (inf where there is no edge)."""
        return self.now - self.last

    def copy(self) -> "RolloutGraph":
        return RolloutGraph(list(self.nodes), list(self.edges), self.now)

    def __len__(self) -> int:
        return len(self.edges)


def init_rollout_graph(graph: TemporalGraph, community, t_n: float, L: int = 2) -> RolloutGraph:
    """Connect community members whose hop distance before ``t_n`` is at most L.

    An edge between direct partners is stamped with their latest interaction;
    an indirect one with the earlier of the two members' latest activity.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    nodes = sorted(int(v) for v in community)
    g = RolloutGraph(nodes, now=float(t_n))
    members = set(nodes)
    latest: dict[int, dict[int, float]] = {}
    active: dict[int, float] = {}
    for a in nodes:
        nbr, ts, _ = graph.recent(a, t_n, max(graph.degree(a), 1))
        seen: dict[int, float] = {}
        for b, tb in zip(nbr.tolist(), ts.tolist()):
            seen.setdefault(b, tb)
        latest[a] = seen
        active[a] = float(ts[0]) if len(ts) else -np.inf
    for i, a in enumerate(nodes):
        dist = hop_distances(graph, a, t_n, L)
        for b in sorted(members & set(dist)):
            j = g.row[b]
            if j > i:
                t_edge = latest[a].get(b, min(active[a], active[b]))
                g.edges.append((i, j, t_edge, "history"))
                g._bump(i, j, t_edge)
    return g


def apply_event(g: RolloutGraph, source: int, dest: int, t: float,
                provenance: str = "predicted") -> RolloutGraph:
    """Append one event (node ids) to the rollout graph, in place."""
    if source not in g.row or dest not in g.row:
        raise ValueError(f"event ({source}, {dest}) has an endpoint outside the community")
    a, b = g.row[source], g.row[dest]
    g.edges.append((a, b, float(t), provenance))
    g._bump(a, b, float(t))
    g.now = max(g.now, float(t))
    return g


class UpdateNetwork:
    """P message-passing layers (mean of MLP([w_u || w_v])) followed by a GRU.

    With ``edge_time`` the message also sees phi(age of the pair's latest
    edge), so a node can tell which of its links fired recently.
    """

    def __init__(self, params: ParameterSet, hidden_dim: int, time_enc: TimeEncoder,
                 layers: int = 1, mlp_hidden: int | None = None, name: str = "update",
                 edge_time: bool = False):
        self.hidden_dim = hidden_dim
        self.time_enc = time_enc
        self.edge_time = edge_time
        n_in = 2 * hidden_dim + (time_enc.dim if edge_time else 0)
        self.msg = [MLP(params, f"{name}.msg{i}", n_in, mlp_hidden or hidden_dim, hidden_dim)
                    for i in range(layers)]
        self.gru = GRUCell(params, f"{name}.gru", hidden_dim + time_enc.dim, hidden_dim)


def _message_pass(net: UpdateNetwork, counts: np.ndarray, H: Tensor,
                  ages: np.ndarray | None = None) -> Tensor:
    n = counts.shape[0]
    w = H
    rows, cols = np.nonzero(counts)
    if len(rows) == 0:
        return T.Tensor(np.zeros((n, net.hidden_dim)))
    deg = counts.sum(axis=1)
    agg = np.zeros((n, len(rows)))
    agg[rows, np.arange(len(rows))] = counts[rows, cols] / deg[rows]
    phi = None
    if net.edge_time:
        if ages is None:
            raise ValueError("edge-time messages need edge ages")
        phi = net.time_enc(np.maximum(ages[rows, cols], 0.0))
    for mlp in net.msg:
        # message into row v from neighbour u: MLP([w_u || w_v (|| phi(age))])
        parts = [T.take_rows(w, cols), T.take_rows(w, rows)]
        if phi is not None:
            parts.append(phi)
        m = mlp(T.concat(parts, axis=1))
        w = T.matmul(agg, m)
    return w


def propagate_update(net: UpdateNetwork, g: RolloutGraph, H, dt: float) -> Tensor:
    """Update every community state from the current rollout graph."""
    H = T.const(H)
    n = H.shape[0]
    w = _message_pass(net, g.counts, H, g.ages() if net.edge_time else None)
    phi = T.take_rows(T.reshape(net.time_enc(dt), (1, -1)), np.zeros(n, dtype=np.intp))
    return net.gru(T.concat([w, phi], axis=1), H)


def incident_only_update(net: UpdateNetwork, g: RolloutGraph, H, dt: float,
                         source: int, dest: int) -> Tensor:
    """Recompute only the states of the event's endpoints; others pass through."""
    H = T.const(H)
    full = propagate_update(net, g, H, dt)
    rows = sorted({g.row[source], g.row[dest]})
    keep = np.ones(H.shape[0], dtype=bool)
    keep[rows] = False
    # rows outside ``rows`` are copied verbatim from H
    order = np.empty(H.shape[0], dtype=np.intp)
    stacked = T.concat([T.take_rows(H, np.nonzero(keep)[0]), T.take_rows(full, rows)], axis=0)
    order[np.nonzero(keep)[0]] = np.arange(keep.sum())
    order[rows] = keep.sum() + np.arange(len(rows))
    return T.take_rows(stacked, order)
