"""Per-community perplexity and normalised time MAE, averaged over communities.

Perplexity is computed from the probabilities a model assigns to the true
next event given the true history (teacher forcing).  MAE compares the
cumulative times of a free-running greedy rollout against the truth.
"""
from __future__ import annotations

import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .ctdg import CommunityAssignment, EventStream, TemporalGraph
from .windows import Window, make_windows

PROB_FLOOR = 1e-12
LOG_FLOOR = math.log(PROB_FLOOR)


def floor_hits(logp_source, logp_dest) -> int:
    lp = np.concatenate([np.asarray(logp_source, float), np.asarray(logp_dest, float)])
    return int(np.sum(lp < LOG_FLOOR))


def perplexity(logp_source, logp_dest) -> float:
    """exp(-(1/K) sum [log p(u_i) + log p(v_i | u_i)]), each probability floored at 1e-12."""
    lu = np.maximum(np.asarray(logp_source, float), LOG_FLOOR)
    lv = np.maximum(np.asarray(logp_dest, float), LOG_FLOOR)
    if lu.shape != lv.shape or lu.size == 0:
        raise ValueError("need K >= 1 matching source/destination log-probabilities")
    return float(np.exp(-np.mean(lu + lv)))


def mae(truth, pred, t0: float) -> float:
    """(1 / (K (t_K - t_0))) sum |t_i - min(t_K, pred_i)|.

    Returns NaN for a degenerate window (t_K == t_0); callers drop it.
    """
    truth = np.asarray(truth, float)
    pred = np.asarray(pred, float)
    if truth.shape != pred.shape or truth.size == 0:
        raise ValueError("truth and predictions must be non-empty and aligned")
    span = truth[-1] - t0
    if not span > 0:
        return math.nan
    return float(np.abs(truth - np.minimum(truth[-1], pred)).sum() / (truth.size * span))


@dataclass
class CommunityMetrics:
    pp: float
    mae: float | None        # None when undefined for this community
    k_effective: int          # events scored for PP
    mae_windows: int = 0


@dataclass
class MetricReport:
    per_community: dict[int, CommunityMetrics]
    metadata: dict = field(default_factory=dict)
    floor_hits: int = 0

    @property
    def mean_pp(self) -> float:
        vals = [c.pp for c in self.per_community.values()]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def mean_mae(self) -> float:
        vals = [c.mae for c in self.per_community.values() if c.mae is not None]
        return float(np.mean(vals)) if vals else math.nan

    @property
    def averages(self) -> tuple[float, float]:
        return self.mean_pp, self.mean_mae

    def to_dict(self) -> dict:
        return {
            "averages": {"pp": self.mean_pp, "mae": self.mean_mae},
            "per_community": {str(q): asdict(c) for q, c in sorted(self.per_community.items())},
            "metadata": self.metadata,
            "floor_hits": self.floor_hits,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        d = json.loads(text)
        per = {int(q): CommunityMetrics(**c) for q, c in d["per_community"].items()}
        return cls(per, d.get("metadata", {}), int(d.get("floor_hits", 0)))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("community,pp,mae,k_effective\n")
        for q, c in sorted(self.per_community.items()):
            m = "" if c.mae is None else repr(c.mae)
            out.write(f"{q},{c.pp!r},{m},{c.k_effective}\n")
        out.write(f"mean,{self.mean_pp!r},{self.mean_mae!r},\n")
        return out.getvalue()


def history_end(graph: TemporalGraph, test: EventStream) -> float:
    """Time of the last graph event before the test split (the first horizon)."""
    if len(test) == 0:
        raise ValueError("empty test split")
    t = graph.stream.t
    k = int(np.searchsorted(t, test.t[0], side="left"))
    return float(t[k - 1]) if k > 0 else float(test.t[0])


def evaluate_community(model, graph: TemporalGraph, windows: list[Window]) -> tuple[CommunityMetrics, int]:
    lu, lv = [], []
    maes = []
    for w in windows:
        sc = model.truth_scores(graph, w)
        lu.append(sc["logp_source"])
        lv.append(sc["logp_dest"])
        if len(w) >= 2:
            steps = model.forecast(graph, w.nodes, w.t_n, len(w))
            m = mae(w.t, [s.t_abs for s in steps], w.t_n)
            if not math.isnan(m):
                maes.append(m)
    lu_a, lv_a = np.concatenate(lu), np.concatenate(lv)
    metrics = CommunityMetrics(perplexity(lu_a, lv_a), float(np.mean(maes)) if maes else None,
                               int(lu_a.size), len(maes))
    return metrics, floor_hits(lu_a, lv_a)


def evaluate_model(model, graph: TemporalGraph, test: EventStream, communities: CommunityAssignment,
                   K: int = 200, start_time: float | None = None, workers: int = 1,
                   metadata: dict | None = None) -> MetricReport:
    """Score ``model`` on the test split, one window sequence per community.

    ``graph`` must contain the history (and may contain the test events;
    encoders only look strictly before each horizon).
    """
    t0 = history_end(graph, test) if start_time is None else float(start_time)
    windows = make_windows(test, communities, K, start_time=t0)
    by_comm: dict[int, list[Window]] = {}
    for w in windows:
        by_comm.setdefault(w.community, []).append(w)
    keys = sorted(by_comm)

    def run(q):
        return evaluate_community(model, graph, by_comm[q])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, keys))
    else:
        results = [run(q) for q in keys]
    meta = {"model": getattr(model, "name", type(model).__name__), "K": K}
    meta.update(metadata or {})
    return MetricReport({q: r[0] for q, r in zip(keys, results)}, meta,
                        sum(r[1] for r in results))
