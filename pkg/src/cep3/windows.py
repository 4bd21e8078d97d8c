"""Per-community forecasting windows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctdg import CommunityAssignment, EventStream


@dataclass(frozen=True)
class Window:
    """Ground-truth continuation of a community after the horizon ``t_n``.

    ``src``/``dst`` hold global node ids; ``nodes`` is the sorted community.
    """

    community: int
    nodes: tuple[int, ...]
    t_n: float
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dts(self) -> np.ndarray:
        return np.diff(np.concatenate([[self.t_n], self.t]))


def make_windows(split: EventStream, communities: CommunityAssignment, K: int,
                 stride: int | None = None, start_time: float | None = None) -> list[Window]:
    """Cut each community's restricted event sequence into windows of ``K`` events.

    The horizon of a window is the time of the community event preceding
    it, or ``start_time`` (default: the split's first timestamp) for the
    first window.  A community with fewer than ``K`` events gives one short
    window; an empty one gives none.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    stride = K if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if start_time is None:
        t0 = float(split.t[0]) if len(split) else 0.0
    else:
        t0 = float(start_time)
    out: list[Window] = []
    for q, members in enumerate(communities.communities):
        sub = split.restrict(members)
        n = len(sub)
        if n == 0:
            continue
        nodes = tuple(sorted(members))
        start = 0
        while start < n:
            stop = min(start + K, n)
            t_n = float(sub.t[start - 1]) if start > 0 else t0
            out.append(Window(q, nodes, t_n, sub.src[start:stop].copy(), sub.dst[start:stop].copy(),
                              sub.t[start:stop].copy()))
            if stop == n:
                break
            start += stride
    return out
