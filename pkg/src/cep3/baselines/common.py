"""Helpers shared by the comparison models."""
from __future__ import annotations

import math

import numpy as np

from ..ctdg import TemporalGraph

PROB_FLOOR = 1e-12


def community_history(graph: TemporalGraph, nodes, t_n: float, limit: int | None = None,
                      since: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Events with both endpoints in ``nodes`` strictly before ``t_n``, oldest first.

    ``limit`` keeps only the most recent events; ``since`` drops events
    earlier than that time.
    """
    s = graph.stream
    stop = int(np.searchsorted(s.t, t_n, side="left"))
    start = 0 if since is None else int(np.searchsorted(s.t, since, side="left"))
    if stop <= start:
        e = np.zeros(0, dtype=np.int64)
        return e, e.copy(), np.zeros(0)
    member = np.zeros(max(s.node_count, 1), dtype=bool)
    member[np.asarray(list(nodes), dtype=np.int64)] = True
    src, dst, t = s.src[start:stop], s.dst[start:stop], s.t[start:stop]
    keep = member[src] & member[dst]
    src, dst, t = src[keep], dst[keep], t[keep]
    if limit is not None:
        src, dst, t = src[-limit:], dst[-limit:], t[-limit:]
    return src.copy(), dst.copy(), t.copy()


def row_index(nodes) -> dict[int, int]:
    return {int(v): i for i, v in enumerate(sorted(int(x) for x in nodes))}


def pair_scores(lam: np.ndarray, u: int, v: int) -> tuple[float, float]:
    """log p(u) and log p(v | u) from a non-negative (n, n) pair-rate matrix."""
    total = lam.sum()
    row = lam[u].sum()
    lu = math.log(max(row / total, PROB_FLOOR)) if total > 0 else math.log(PROB_FLOOR)
    lv = math.log(max(lam[u, v] / row, PROB_FLOOR)) if row > 0 else math.log(PROB_FLOOR)
    return lu, lv


def greedy_pair(lam: np.ndarray) -> tuple[int, int, np.ndarray, np.ndarray]:
    """argmax source by row mass, then argmax destination; ties to the lowest row."""
    rows = lam.sum(axis=1)
    p_u = rows / rows.sum()
    u = int(np.argmax(p_u))
    p_v = lam[u] / rows[u] if rows[u] > 0 else np.full(lam.shape[1], 1.0 / lam.shape[1])
    return u, int(np.argmax(p_v)), p_u, p_v


def sample_pair(lam: np.ndarray, rng: np.random.Generator) -> tuple[int, int, np.ndarray, np.ndarray]:
    rows = lam.sum(axis=1)
    p_u = rows / rows.sum()
    u = int(rng.choice(len(p_u), p=p_u))
    p_v = lam[u] / rows[u]
    return u, int(rng.choice(len(p_v), p=p_v)), p_u, p_v
