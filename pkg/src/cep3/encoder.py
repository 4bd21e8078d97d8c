"""Temporal graph-attention encoder producing initial node states."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import MLP, MultiHeadAttention, ParameterSet, Tensor
from .autodiff import ops as T
from .ctdg import TemporalGraph


class TimeEncoder:
    """Learnable harmonic time encoding cos(omega * dt + b)."""

    def __init__(self, params: ParameterSet, name: str = "time", dim: int = 16):
        self.dim = dim
        self.omega = params.add(f"{name}.omega", (dim,), "loguniform")
        self.bias = params.add(f"{name}.b", (dim,), "zeros")

    def __call__(self, dt) -> Tensor:
        return encode_time(self, dt)


def encode_time(enc: TimeEncoder, dt) -> Tensor:
    """Encode a scalar (-> (dim,)) or a 1-d array of durations (-> (n, dim))."""
    dt_arr = np.asarray(dt, dtype=float)
    if np.any(dt_arr < 0):
        raise ValueError("time differences must be non-negative")
    if dt_arr.ndim == 0:
        return T.cos(T.add(T.mul(enc.omega, float(dt_arr)), enc.bias))
    col = dt_arr.reshape(-1, 1)
    return T.cos(T.add(T.matmul(col, T.reshape(enc.omega, (1, enc.dim))), enc.bias))


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    hidden_dim: int = 100
    heads: int = 4
    fanout: int = 15
    time_dim: int = 16
    feature_dim: int = 0
    mlp_hidden: int | None = None   # defaults to hidden_dim

    def __post_init__(self):
        if self.hidden_dim % self.heads:
            raise ValueError(f"heads={self.heads} must divide hidden_dim={self.hidden_dim}")


@dataclass(frozen=True)
class NodeState:
    node: int
    h: np.ndarray
    as_of: float


@dataclass
class EncodedNodes:
    """Encoder output: row ``i`` of ``h`` belongs to ``nodes[i]``."""

    nodes: list[int]
    h: Tensor
    as_of: float

    def states(self) -> list[NodeState]:
        return [NodeState(v, self.h.value[i].copy(), self.as_of) for i, v in enumerate(self.nodes)]


class AttentionLayer:
    def __init__(self, params: ParameterSet, name: str, cfg: EncoderConfig):
        d = cfg.hidden_dim
        self.attn = MultiHeadAttention(params, f"{name}.attn", d + cfg.time_dim,
                                       d + cfg.feature_dim + cfg.time_dim, d, cfg.heads)
        self.mlp = MLP(params, f"{name}.mlp", 2 * d, cfg.mlp_hidden or d, d)


class Encoder:
    def __init__(self, params: ParameterSet, cfg: EncoderConfig, time_enc: TimeEncoder):
        self.cfg = cfg
        self.time_enc = time_enc
        self.layers = [AttentionLayer(params, f"encoder.l{i}", cfg) for i in range(cfg.layers)]

    def __call__(self, graph: TemporalGraph, nodes, t_n: float) -> EncodedNodes:
        return encode(self, graph, nodes, t_n)


@dataclass
class _Neighborhood:
    """Padded neighbour table for a list of query nodes."""

    nbr: np.ndarray        # (N, F) neighbour node ids (0 where padded)
    dt: np.ndarray         # (N, F)
    feats: np.ndarray      # (N, F, feature_dim)
    mask: np.ndarray       # (N, F) bool


def _gather_neighborhood(graph: TemporalGraph, nodes: list[int], t_src: float, fanout: int,
                         feature_dim: int) -> _Neighborhood:
    rows = [graph.recent(v, t_src, fanout) for v in nodes]
    F = max((len(r[0]) for r in rows), default=0)
    N = len(nodes)
    nbr = np.zeros((N, F), dtype=np.int64)
    dt = np.zeros((N, F))
    feats = np.zeros((N, F, feature_dim))
    mask = np.zeros((N, F), dtype=bool)
    src_feats = graph.stream.features
    for i, (nb, ts, eid) in enumerate(rows):
        k = len(nb)
        nbr[i, :k] = nb
        dt[i, :k] = t_src - ts
        mask[i, :k] = True
        if feature_dim and k:
            if src_feats.shape[1] != feature_dim:
                raise ValueError(f"edge features have dim {src_feats.shape[1]}, "
                                 f"encoder expects {feature_dim}")
            feats[i, :k] = src_feats[eid]
    return _Neighborhood(nbr, dt, feats, mask)


def encode_layer(layer: AttentionLayer, time_enc: TimeEncoder, z_prev, nodes: list[int],
                 index: dict[int, int], hood: _Neighborhood) -> Tensor:
    """One temporal attention layer for ``nodes``.

    ``z_prev`` holds previous-layer representations, row ``index[v]`` for
    node ``v``; it must cover the nodes and all their neighbours.  Nodes with
    an empty neighbourhood aggregate the zero vector.
    """
    z_prev = T.const(z_prev)
    d = z_prev.shape[1]
    N = len(nodes)
    self_rows = T.take_rows(z_prev, [index[v] for v in nodes])
    phi0 = T.take_rows(T.reshape(time_enc(0.0), (1, -1)), np.zeros(N, dtype=np.intp))
    q = T.concat([self_rows, phi0], axis=1)
    F = hood.nbr.shape[1]
    if F == 0:
        agg = T.Tensor(np.zeros((N, layer.attn.d_model)))
    else:
        flat_idx = np.array([index[int(v)] if m else 0
                             for v, m in zip(hood.nbr.reshape(-1), hood.mask.reshape(-1))])
        zn = T.take_rows(z_prev, flat_idx)
        phin = time_enc(hood.dt.reshape(-1))
        parts = [zn]
        if hood.feats.shape[2]:
            parts.append(hood.feats.reshape(N * F, -1))
        parts.append(phin)
        C = T.reshape(T.concat(parts, axis=1), (N, F, -1))
        agg = layer.attn.batched(q, C, hood.mask)
    return layer.mlp(T.concat([self_rows, agg], axis=1))


def encode(enc: Encoder, graph: TemporalGraph, nodes, t_n: float) -> EncodedNodes:
    """Stack of attention layers over neighbourhoods sampled before ``t_n``.

    Node inputs are zero vectors; every hop is bounded by ``t_n`` itself.
    """
    cfg = enc.cfg
    targets = [int(v) for v in nodes]
    # needed[l]: nodes whose layer-l representation is required
    needed: list[list[int]] = [[] for _ in range(cfg.layers + 1)]
    needed[cfg.layers] = targets
    hoods: dict[int, _Neighborhood] = {}
    for lvl in range(cfg.layers, 0, -1):
        cur = needed[lvl]
        hood = _gather_neighborhood(graph, cur, t_n, cfg.fanout, cfg.feature_dim)
        hoods[lvl] = hood
        seen = dict.fromkeys(cur)
        for v in hood.nbr[hood.mask].tolist():
            seen.setdefault(int(v))
        needed[lvl - 1] = list(seen)
    z = T.Tensor(np.zeros((len(needed[0]), cfg.hidden_dim)))
    index = {v: i for i, v in enumerate(needed[0])}
    for lvl in range(1, cfg.layers + 1):
        cur = needed[lvl]
        z = encode_layer(enc.layers[lvl - 1], enc.time_enc, z, cur, index, hoods[lvl])
        index = {v: i for i, v in enumerate(cur)}
    return EncodedNodes(targets, z, float(t_n))
