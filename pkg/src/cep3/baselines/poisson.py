"""Constant-intensity per-pair Poisson baseline fitted in closed form."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..ctdg import DataError, EventStream, TemporalGraph
from ..forecaster import ForecastStep, predict_dt
from ..windows import Window
from .common import greedy_pair, pair_scores, row_index, sample_pair


@dataclass
class PoissonModel:
    """Sparse map of ordered-pair rates; unseen pairs get a smoothed default.

    The default for a community of size n is ``0.5 / (n**2 * t_span)``,
    i.e. half an event over the whole pair space.
    """

    rates: dict[tuple[int, int], float]
    t_span: float
    smoothing: float = 0.5
    name: str = field(default="poisson", init=False)

    def __post_init__(self):
        if not self.t_span > 0:
            raise DataError("zero timespan")
        if any(r < 0 for r in self.rates.values()):
            raise ValueError("rates must be non-negative")

    def default_rate(self, n: int) -> float:
        return self.smoothing / (n * n * self.t_span)

    def rate(self, u: int, v: int, n: int) -> float:
        return self.rates.get((u, v), self.default_rate(n))

    def rate_matrix(self, nodes) -> np.ndarray:
        nodes = sorted(int(x) for x in nodes)
        n = len(nodes)
        out = np.full((n, n), self.default_rate(n))
        pos = row_index(nodes)
        for (u, v), r in self.rates.items():
            if u in pos and v in pos:
                out[pos[u], pos[v]] = r
        return out

    # evaluation API -------------------------------------------------------

    def truth_scores(self, graph: TemporalGraph, window: Window) -> dict[str, np.ndarray]:
        lam = self.rate_matrix(window.nodes)
        pos = row_index(window.nodes)
        lu, lv = [], []
        for u, v in zip(window.src.tolist(), window.dst.tolist()):
            a, b = pair_scores(lam, pos[u], pos[v])
            lu.append(a)
            lv.append(b)
        k = len(window)
        return {"logp_source": np.array(lu), "logp_dest": np.array(lv),
                "rate": np.full(k, lam.sum())}

    def forecast(self, graph: TemporalGraph, nodes, t_n: float, K: int, mode: str = "mean",
                 rng: np.random.Generator | None = None) -> list[ForecastStep]:
        nodes = sorted(int(x) for x in nodes)
        lam = self.rate_matrix(nodes)
        total = float(lam.sum())
        steps, t = [], float(t_n)
        for _ in range(K):
            dt = predict_dt(total, mode, rng)
            if mode == "mean":
                u, v, p_u, p_v = greedy_pair(lam)
            else:
                u, v, p_u, p_v = sample_pair(lam, rng)
            t += dt
            steps.append(ForecastStep(dt, t, nodes[u], nodes[v], total, p_u, p_v))
        return steps

    # serialization --------------------------------------------------------

    def to_csv(self, fh) -> None:
        fh.write(f"# t_span={self.t_span!r} smoothing={self.smoothing!r}\n")
        fh.write("u,v,lambda\n")
        for (u, v), r in sorted(self.rates.items()):
            fh.write(f"{u},{v},{r!r}\n")

    @classmethod
    def from_csv(cls, fh) -> "PoissonModel":
        meta = _read_comment(fh)
        reader = csv.reader(fh)
        if next(reader, None) != ["u", "v", "lambda"]:
            raise DataError("expected header u,v,lambda")
        rates = {(int(r[0]), int(r[1])): float(r[2]) for r in reader if r}
        return cls(rates, float(meta["t_span"]), float(meta.get("smoothing", 0.5)))


def _read_comment(fh) -> dict[str, str]:
    line = fh.readline()
    if not line.startswith("#"):
        raise DataError("missing '# key=value' preamble")
    return dict(kv.split("=", 1) for kv in line[1:].split())


def fit_poisson(train: EventStream, t_span: float | None = None, smoothing: float = 0.5) -> PoissonModel:
    """Maximum-likelihood rates count(u, v) / t_span.

    ``t_span`` defaults to the time between the first and last event.
    """
    if t_span is None:
        t_span = float(train.t[-1] - train.t[0]) if len(train) else 0.0
    if not t_span > 0:
        raise DataError("zero timespan")
    counts: dict[tuple[int, int], int] = {}
    for u, v in zip(train.src.tolist(), train.dst.tolist()):
        counts[(u, v)] = counts.get((u, v), 0) + 1
    return PoissonModel({k: c / t_span for k, c in counts.items()}, float(t_span), smoothing)
