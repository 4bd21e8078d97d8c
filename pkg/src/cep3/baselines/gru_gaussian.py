"""Sequence-to-sequence GRU with a Gaussian time head and categorical entity heads.

The encoder GRU reads the most recent community events before the horizon;
the decoder GRU starts from its final state and emits one event per step.
Time is a Gaussian (mean, log-variance) over the gap; the point forecast is
the mean clamped to ``DT_MIN``.  The mean is trained by squared error and
the variance by Gaussian NLL with the mean held fixed.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import GRUCell, Linear, ParameterSet
from ..autodiff import ops as T
from ..ctdg import TemporalGraph
from ..forecaster import ForecastStep
from ..training import LOG_PROB_FLOOR, LossTerms
from ..windows import Window
from .common import community_history, row_index

DT_MIN = 1e-6


@dataclass(frozen=True)
class GRUGaussianConfig:
    node_count: int
    embed_dim: int = 32
    hidden_dim: int = 64
    context: int = 32

    def to_dict(self) -> dict:
        return asdict(self)


class GRUGaussianModel:
    name = "gru_gaussian"

    def __init__(self, cfg: GRUGaussianConfig, seed: int = 0):
        self.cfg = cfg
        V, d, h = cfg.node_count, cfg.embed_dim, cfg.hidden_dim
        self.params = p = ParameterSet(seed)
        self.src_emb = p.add("gru.src_emb", (V, d), "uniform", fan_in=d)
        self.dst_emb = p.add("gru.dst_emb", (V, d), "uniform", fan_in=d)
        self.enc = GRUCell(p, "gru.enc", 2 * d + 1, h)
        self.dec = GRUCell(p, "gru.dec", 2 * d + 1, h)
        self.mean = Linear(p, "gru.mean", h, 1)
        self.logvar = Linear(p, "gru.logvar", h, 1)
        self.src_out = p.add("gru.src_out", (V, h), "uniform", fan_in=h)
        self.dst_out = p.add("gru.dst_out", (V, h), "uniform", fan_in=h)

    def _input(self, u: int, v: int, dt: float):
        return T.concat([self.src_emb[u], self.dst_emb[v], T.const(np.array([dt]))], axis=0)

    def encode(self, graph: TemporalGraph, nodes, t_n: float):
        """Final encoder state and the last history event (u, v, dt) fed to the decoder."""
        h = T.const(np.zeros(self.cfg.hidden_dim))
        src, dst, t = community_history(graph, nodes, t_n, limit=self.cfg.context)
        if len(t) == 0:
            return h, None
        prev = t[0]
        last = None
        for u, v, tj in zip(src.tolist(), dst.tolist(), t.tolist()):
            last = (u, v, tj - prev)
            h = self.enc(self._input(*last), h)
            prev = tj
        return h, last

    def decode_step(self, h, prev_event):
        x = T.const(np.zeros(self.enc.n_in)) if prev_event is None else self._input(*prev_event)
        return self.dec(x, h)

    def heads(self, h, rows: np.ndarray):
        mean = T.reshape(self.mean(h), ())
        logvar = T.reshape(self.logvar(h), ())
        lsrc = T.log_softmax(T.matmul(T.take_rows(self.src_out, rows), h))
        ldst = T.log_softmax(T.matmul(T.take_rows(self.dst_out, rows), h))
        return mean, logvar, lsrc, ldst

    # ------------------------------------------------------------ training

    def window_objective(self, graph: TemporalGraph, window: Window):
        nodes = sorted(window.nodes)
        rows = np.asarray(nodes, dtype=np.int64)
        pos = row_index(nodes)
        h, prev = self.encode(graph, nodes, window.t_n)
        terms, parts = LossTerms(), []
        for u, v, dt in zip(window.src.tolist(), window.dst.tolist(), window.dts.tolist()):
            h = self.decode_step(h, prev)
            mean, logvar, lsrc, ldst = self.heads(h, rows)
            err = T.sub(mean, dt)
            mse = T.mul(err, err)
            resid = dt - float(mean.value)
            var_nll = T.mul(T.add(logvar, T.mul(T.exp(T.neg(logvar)), resid * resid)), 0.5)
            tl = T.add(mse, var_nll)
            ent = T.neg(T.add(T.clamp_min(lsrc[pos[u]], LOG_PROB_FLOOR),
                              T.clamp_min(ldst[pos[v]], LOG_PROB_FLOOR)))
            parts.append(T.add(tl, ent))
            terms.add(float(tl.value), float(ent.value))
            prev = (u, v, dt)
        return T.mul(T.tsum(T.stack_scalars(parts)), 1.0 / len(parts)), terms

    # ------------------------------------------------------------ evaluation API

    def truth_scores(self, graph: TemporalGraph, window: Window) -> dict[str, np.ndarray]:
        nodes = sorted(window.nodes)
        rows = np.asarray(nodes, dtype=np.int64)
        pos = row_index(nodes)
        h, prev = self.encode(graph, nodes, window.t_n)
        lu, lv, rate = [], [], []
        for u, v, dt in zip(window.src.tolist(), window.dst.tolist(), window.dts.tolist()):
            h = self.decode_step(h, prev)
            mean, _, lsrc, ldst = self.heads(h, rows)
            lu.append(float(lsrc.value[pos[u]]))
            lv.append(float(ldst.value[pos[v]]))
            rate.append(1.0 / max(float(mean.value), DT_MIN))
            prev = (u, v, dt)
        return {"logp_source": np.array(lu), "logp_dest": np.array(lv), "rate": np.array(rate)}

    def forecast(self, graph: TemporalGraph, nodes, t_n: float, K: int, mode: str = "mean",
                 rng: np.random.Generator | None = None) -> list[ForecastStep]:
        nodes = sorted(int(x) for x in nodes)
        rows = np.asarray(nodes, dtype=np.int64)
        n = len(nodes)
        h, prev = self.encode(graph, nodes, t_n)
        steps, t = [], float(t_n)
        for _ in range(K):
            h = self.decode_step(h, prev)
            mean, logvar, lsrc, ldst = self.heads(h, rows)
            dt = float(mean.value)
            if mode != "mean":
                dt += math.exp(0.5 * float(logvar.value)) * float(rng.standard_normal())
            dt = max(dt, DT_MIN)
            p_u, p_v = np.exp(lsrc.value), np.exp(ldst.value)
            if mode == "mean":
                u, v = int(np.argmax(p_u)), int(np.argmax(p_v))
            else:
                u, v = int(rng.choice(n, p=p_u / p_u.sum())), int(rng.choice(n, p=p_v / p_v.sum()))
            t += dt
            steps.append(ForecastStep(dt, t, nodes[u], nodes[v], 1.0 / dt, p_u, p_v))
            prev = (nodes[u], nodes[v], dt)
        return steps

    def save(self, path) -> None:
        self.params.save(path)

    def load(self, path) -> None:
        self.params.load(path)
