"""Recurrent marked temporal point process over a flattened community sequence.

The recurrent state sees only the event sequence (no graph structure).
After event j the intensity is

    lambda(t) = exp(v . h_j + w * (t - t_j) + b),   w > 0,

and the marker is the ordered pair, either as one softmax over all |C|^2
pairs (``plain``) or as a source softmax followed by a destination softmax
(``hierarchical``).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import integrate

from ..autodiff import GRUCell, Linear, ParameterSet, no_grad
from ..autodiff import ops as T
from ..ctdg import TemporalGraph
from ..forecaster import COUNTER, CapacityError, ForecastStep
from ..training import LOG_PROB_FLOOR, LossTerms
from ..windows import Window
from .common import community_history, row_index


@dataclass(frozen=True)
class RMTPPConfig:
    node_count: int
    embed_dim: int = 32
    hidden_dim: int = 64
    hierarchical: bool = False
    context: int = 32          # history events replayed (without gradient) before a window
    pair_budget: int = 1 << 20

    def to_dict(self) -> dict:
        return asdict(self)


class RMTPPModel:
    def __init__(self, cfg: RMTPPConfig, seed: int = 0):
        self.cfg = cfg
        self.name = "rmtpp_hrchy" if cfg.hierarchical else "rmtpp"
        V, d, h = cfg.node_count, cfg.embed_dim, cfg.hidden_dim
        self.params = p = ParameterSet(seed)
        if cfg.hierarchical:
            self.src_emb = p.add("rmtpp.src_emb", (V, d), "uniform", fan_in=d)
            self.dst_emb = p.add("rmtpp.dst_emb", (V, d), "uniform", fan_in=d)
            self.src_out = p.add("rmtpp.src_out", (V, h), "uniform", fan_in=h)
            self.dst_out = p.add("rmtpp.dst_out", (V, h), "uniform", fan_in=h)
            self.cond = Linear(p, "rmtpp.cond", h + d, h)
            in_dim = 2 * d + 1
        else:
            if V * V > cfg.pair_budget:
                raise CapacityError(f"{V * V} pair markers exceed the budget of {cfg.pair_budget}")
            self.pair_emb = p.add("rmtpp.pair_emb", (V * V, d), "uniform", fan_in=d)
            self.pair_out = p.add("rmtpp.pair_out", (V * V, h), "uniform", fan_in=h)
            in_dim = d + 1
        self.gru = GRUCell(p, "rmtpp.gru", in_dim, h)
        self.v = Linear(p, "rmtpp.v", h, 1)
        self.w_raw = p.add("rmtpp.w", (1,), "zeros")
        self.w_raw.value[:] = -3.0   # w starts near 0.05

    # ------------------------------------------------------------ pieces

    def _input(self, u: int, v: int, dt: float):
        V = self.cfg.node_count
        if self.cfg.hierarchical:
            e = T.concat([self.src_emb[u], self.dst_emb[v]], axis=0)
        else:
            e = self.pair_emb[u * V + v]
        return T.concat([e, T.const(np.array([dt]))], axis=0)

    def step(self, h, u: int, v: int, dt: float):
        return self.gru(self._input(u, v, dt), h)

    def initial_state(self, graph: TemporalGraph, nodes, t_n: float):
        h = T.const(np.zeros(self.cfg.hidden_dim))
        src, dst, t = community_history(graph, nodes, t_n, limit=self.cfg.context)
        with no_grad():
            prev = t[0] if len(t) else t_n
            for u, v, tj in zip(src.tolist(), dst.tolist(), t.tolist()):
                h = self.step(h, u, v, tj - prev)
                prev = tj
        return T.const(h.value)

    def _w(self):
        return T.add(T.softplus(self.w_raw), 1e-3)

    def time_log_density(self, h, dt: float):
        """log f(dt) = c + w dt + (e^c - e^(c + w dt)) / w with c = v.h + b."""
        c = T.reshape(self.v(h), (1,))
        w = self._w()
        z = T.add(c, T.mul(w, dt))
        ll = T.add(z, T.div(T.sub(T.exp(c), T.exp(z)), w))
        return T.reshape(ll, ())

    def marker_log_probs(self, h, rows: np.ndarray, u_row: int | None = None):
        """Plain: (n*n,) log-probs over pairs.  Hierarchical: source log-probs,
        or destination log-probs given ``u_row``."""
        n = len(rows)
        V = self.cfg.node_count
        if not self.cfg.hierarchical:
            if n * n > self.cfg.pair_budget:
                raise CapacityError(f"{n * n} pairs exceed the budget of {self.cfg.pair_budget}")
            COUNTER.add("rmtpp_pair", n * n)
            idx = (rows[:, None] * V + rows[None, :]).reshape(-1)
            return T.log_softmax(T.matmul(T.take_rows(self.pair_out, idx), h))
        if u_row is None:
            COUNTER.add("rmtpp_source", n)
            return T.log_softmax(T.matmul(T.take_rows(self.src_out, rows), h))
        COUNTER.add("rmtpp_dest", n)
        g = T.tanh(self.cond(T.concat([h, self.src_emb[int(rows[u_row])]], axis=0)))
        return T.log_softmax(T.matmul(T.take_rows(self.dst_out, rows), g))

    def entity_log_probs(self, h, rows: np.ndarray, ur: int, vr: int):
        if self.cfg.hierarchical:
            return self.marker_log_probs(h, rows)[ur], self.marker_log_probs(h, rows, ur)[vr]
        n = len(rows)
        lj = T.reshape(self.marker_log_probs(h, rows), (n, n))
        row = lj[ur]
        mx = float(row.value.max())
        lu = T.add(T.log(T.tsum(T.exp(T.sub(row, mx)))), mx)
        return lu, T.sub(row[vr], lu)

    def expected_dt(self, h) -> float:
        """Mean waiting time by integrating the survival function."""
        c = float(self.v(T.const(h.value)).value[0])
        w = float(self._w().value[0])
        ec = math.exp(c)

        def survival(s):
            ws = w * s
            if ws > 700.0:
                return 0.0
            return math.exp(-ec * math.expm1(ws) / w)

        val, _ = integrate.quad(survival, 0.0, np.inf, limit=200)
        return float(val)

    # ------------------------------------------------------------ training

    def window_objective(self, graph: TemporalGraph, window: Window):
        nodes = sorted(window.nodes)
        rows = np.asarray(nodes, dtype=np.int64)
        pos = row_index(nodes)
        h = self.initial_state(graph, nodes, window.t_n)
        terms, parts = LossTerms(), []
        for i, (u, v, dt) in enumerate(zip(window.src.tolist(), window.dst.tolist(), window.dts.tolist())):
            tl = T.neg(self.time_log_density(h, dt))
            lu, lv = self.entity_log_probs(h, rows, pos[u], pos[v])
            ent = T.neg(T.add(T.clamp_min(lu, LOG_PROB_FLOOR), T.clamp_min(lv, LOG_PROB_FLOOR)))
            parts.append(T.add(tl, ent))
            terms.add(float(tl.value), float(ent.value))
            if i + 1 < len(window):
                h = self.step(h, u, v, dt)
        return T.mul(T.tsum(T.stack_scalars(parts)), 1.0 / len(parts)), terms

    # ------------------------------------------------------------ evaluation API

    def truth_scores(self, graph: TemporalGraph, window: Window) -> dict[str, np.ndarray]:
        nodes = sorted(window.nodes)
        rows = np.asarray(nodes, dtype=np.int64)
        pos = row_index(nodes)
        h = self.initial_state(graph, nodes, window.t_n)
        lu, lv, rate = [], [], []
        for u, v, dt in zip(window.src.tolist(), window.dst.tolist(), window.dts.tolist()):
            a, b = self.entity_log_probs(h, rows, pos[u], pos[v])
            lu.append(float(a.value))
            lv.append(float(b.value))
            rate.append(math.exp(float(self.v(h).value[0])))
            h = self.step(h, u, v, dt)
        return {"logp_source": np.array(lu), "logp_dest": np.array(lv), "rate": np.array(rate)}

    def forecast(self, graph: TemporalGraph, nodes, t_n: float, K: int, mode: str = "mean",
                 rng: np.random.Generator | None = None) -> list[ForecastStep]:
        nodes = sorted(int(x) for x in nodes)
        rows = np.asarray(nodes, dtype=np.int64)
        n = len(nodes)
        h = self.initial_state(graph, nodes, t_n)
        steps, t = [], float(t_n)
        for _ in range(K):
            if mode == "mean":
                dt = self.expected_dt(h)
            else:
                dt = self._sample_dt(h, rng)
            if self.cfg.hierarchical:
                p_u = np.exp(self.marker_log_probs(h, rows).value)
                u = int(np.argmax(p_u)) if mode == "mean" else int(rng.choice(n, p=p_u / p_u.sum()))
                p_v = np.exp(self.marker_log_probs(h, rows, u).value)
                v = int(np.argmax(p_v)) if mode == "mean" else int(rng.choice(n, p=p_v / p_v.sum()))
            else:
                pj = np.exp(self.marker_log_probs(h, rows).value)
                k = int(np.argmax(pj)) if mode == "mean" else int(rng.choice(n * n, p=pj / pj.sum()))
                u, v = divmod(k, n)
                pj = pj.reshape(n, n)
                p_u = pj.sum(axis=1)
                p_v = pj[u] / pj[u].sum()
            t += dt
            steps.append(ForecastStep(dt, t, nodes[u], nodes[v], 1.0 / dt, p_u, p_v))
            h = self.step(h, nodes[u], nodes[v], dt)
        return steps

    def _sample_dt(self, h, rng: np.random.Generator) -> float:
        """Inverse-CDF draw: solve e^c (e^(w s) - 1) / w = E with E ~ Exp(1)."""
        c = float(self.v(T.const(h.value)).value[0])
        w = float(self._w().value[0])
        e = -math.log(1.0 - rng.random())
        return math.log1p(w * e * math.exp(-c)) / w

    def save(self, path) -> None:
        self.params.save(path)

    def load(self, path) -> None:
        self.params.load(path)
