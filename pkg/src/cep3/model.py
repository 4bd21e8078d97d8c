"""The CEP3 model: encoder + forecasting heads + autoregressive update."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .ar_update import (RolloutGraph, UpdateNetwork, apply_event, incident_only_update,
                        init_rollout_graph, propagate_update)
from .autodiff import ParameterSet, Tensor
from .autodiff import ops as T
from .ctdg import TemporalGraph
from .encoder import Encoder, EncoderConfig, TimeEncoder
from .forecaster import (DestHead, ForecastHeads, ForecastStep, IntensityHead, JointHead,
                         SourceHead, dest_log_probs, forecast_step_greedy, intensities,
                         joint_log_probs, source_log_probs)
from .windows import Window


@dataclass(frozen=True)
class CEP3Config:
    hidden_dim: int = 100
    forecaster_hidden: int = 50
    heads: int = 4
    hops: int = 2
    fanout: int = 15
    time_dim: int = 16
    feature_dim: int = 0
    mp_layers: int = 1
    edge_time: bool = True          # messages see the age of each rollout edge
    hierarchical: bool = True
    ar_mode: str = "full"          # "full" | "incident" (the w/o-AR ablation)
    mask_self_loops: bool = False
    literal_first_dt: bool = False  # feed the first step's dt to every GRU update
    pair_budget: int = 1 << 20

    def __post_init__(self):
        if self.ar_mode not in ("full", "incident"):
            raise ValueError(f"ar_mode must be 'full' or 'incident', got {self.ar_mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TeacherStep:
    rate_total: Tensor
    logp_source: Tensor
    logp_dest: Tensor
    dt: float


class CEP3:
    name = "cep3"

    def __init__(self, cfg: CEP3Config = CEP3Config(), seed: int = 0):
        self.cfg = cfg
        self.params = ParameterSet(seed)
        p = self.params
        self.time_enc = TimeEncoder(p, "time", cfg.time_dim)
        self.encoder = Encoder(p, EncoderConfig(cfg.hops, cfg.hidden_dim, cfg.heads, cfg.fanout,
                                                cfg.time_dim, cfg.feature_dim), self.time_enc)
        fh = cfg.forecaster_hidden
        intensity = IntensityHead(p, cfg.hidden_dim, fh)
        if cfg.hierarchical:
            self.heads = ForecastHeads(
                intensity,
                source=SourceHead(p, cfg.hidden_dim, self.time_enc, fh),
                dest=DestHead(p, cfg.hidden_dim, self.time_enc, fh, mask_self=cfg.mask_self_loops))
        else:
            self.heads = ForecastHeads(intensity, joint=JointHead(p, cfg.hidden_dim, self.time_enc, fh,
                                                                   pair_budget=cfg.pair_budget))
        self.update_net = UpdateNetwork(p, cfg.hidden_dim, self.time_enc, cfg.mp_layers,
                                        edge_time=cfg.edge_time)

    # ----------------------------------------------------------------- pieces

    def initial_states(self, graph: TemporalGraph, nodes, t_n: float) -> tuple[Tensor, RolloutGraph]:
        enc = self.encoder(graph, nodes, t_n)
        return enc.h, init_rollout_graph(graph, nodes, t_n, self.cfg.hops)

    def update(self, g: RolloutGraph, H, dt: float, source: int, dest: int) -> Tensor:
        if self.cfg.ar_mode == "incident":
            return incident_only_update(self.update_net, g, H, dt, source, dest)
        return propagate_update(self.update_net, g, H, dt)

    def entity_log_probs(self, H, u_row: int, v_row: int, dt: float) -> tuple[Tensor, Tensor]:
        """log p(u) and log p(v | u) for the given rows, conditioned on dt."""
        if self.heads.hierarchical:
            lu = source_log_probs(self.heads.source, H, dt)
            lv = dest_log_probs(self.heads.dest, H, u_row, dt)
            return lu[u_row], lv[v_row]
        n = T.const(H).shape[0]
        lj = T.reshape(joint_log_probs(self.heads.joint, H, dt), (n, n))
        row = lj[u_row]
        mx = float(row.value.max())
        logp_u = T.add(T.log(T.tsum(T.exp(T.sub(row, mx)))), mx)
        return logp_u, T.sub(row[v_row], logp_u)

    # ------------------------------------------------------------- traversals

    def teacher_forced(self, graph: TemporalGraph, window: Window,
                       rollouts: list | None = None) -> Iterator[TeacherStep]:
        """Walk the ground-truth window, yielding per-step quantities.

        States are updated with the true events (provenance ``"truth"``).
        The rollout graph is appended to ``rollouts`` when a list is given.
        """
        nodes = list(window.nodes)
        H, g = self.initial_states(graph, nodes, window.t_n)
        if rollouts is not None:
            rollouts.append(g)
        dts = window.dts
        for i in range(len(window)):
            u, v, dt = int(window.src[i]), int(window.dst[i]), float(dts[i])
            _, lam_total = intensities(self.heads.intensity, H)
            lu, lv = self.entity_log_probs(H, g.row[u], g.row[v], dt)
            yield TeacherStep(lam_total, lu, lv, dt)
            if i + 1 < len(window):
                apply_event(g, u, v, float(window.t[i]), "truth")
                H = self.update(g, H, float(dts[0]) if self.cfg.literal_first_dt else dt, u, v)

    def forecast(self, graph: TemporalGraph, nodes, t_n: float, K: int, mode: str = "mean",
                 rng: np.random.Generator | None = None) -> list[ForecastStep]:
        """Free-running rollout of ``K`` events (greedy in ``mean`` mode)."""
        nodes = sorted(int(v) for v in nodes)
        H, g = self.initial_states(graph, nodes, t_n)
        steps: list[ForecastStep] = []
        t_prev = float(t_n)
        first_dt = None
        for _ in range(K):
            step = forecast_step_greedy(self.heads, H, nodes, t_prev, mode, rng)
            steps.append(step)
            first_dt = step.dt if first_dt is None else first_dt
            apply_event(g, step.source, step.dest, step.t_abs, "predicted")
            H = self.update(g, H, first_dt if self.cfg.literal_first_dt else step.dt,
                            step.source, step.dest)
            t_prev = step.t_abs
        return steps

    # -------------------------------------------------------- evaluation API

    def truth_scores(self, graph: TemporalGraph, window: Window) -> dict[str, np.ndarray]:
        """Teacher-forced log p(u_i), log p(v_i | u_i) and total rates."""
        lu, lv, rate = [], [], []
        for st in self.teacher_forced(graph, window):
            lu.append(float(st.logp_source.value))
            lv.append(float(st.logp_dest.value))
            rate.append(float(st.rate_total.value))
        return {"logp_source": np.array(lu), "logp_dest": np.array(lv), "rate": np.array(rate)}

    def save(self, path) -> None:
        self.params.save(path)

    def load(self, path) -> None:
        self.params.load(path)
