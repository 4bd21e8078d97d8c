"""Intensity and entity heads: time first, then source, then destination.

All heads operate on a community state matrix ``H`` of shape (|C|, hidden)
whose row ``i`` is the state of the ``i``-th community member (ascending
node id).  Distributions are returned as log-probabilities over rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import MLP, ParameterSet, Tensor
from .autodiff import ops as T
from .encoder import TimeEncoder

RATE_FLOOR = 1e-9


class CapacityError(RuntimeError):
    """A pairwise head was asked for more pairs than its budget allows."""


class LogitCounter:
    """Counts candidate logits evaluated, per head kind."""

    def __init__(self):
        self.counts: dict[str, int] = {}

    def add(self, kind: str, n: int) -> None:
        self.counts[kind] = self.counts.get(kind, 0) + int(n)

    def __getitem__(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    def reset(self) -> None:
        self.counts.clear()


COUNTER = LogitCounter()


class IntensityHead:
    def __init__(self, params: ParameterSet, hidden_dim: int, mlp_hidden: int = 50,
                 name: str = "intensity"):
        self.mlp = MLP(params, name, hidden_dim, mlp_hidden, 1)


class SourceHead:
    def __init__(self, params: ParameterSet, hidden_dim: int, time_enc: TimeEncoder,
                 mlp_hidden: int = 50, name: str = "source"):
        self.time_enc = time_enc
        self.mlp = MLP(params, name, hidden_dim + time_enc.dim, mlp_hidden, 1)


class DestHead:
    def __init__(self, params: ParameterSet, hidden_dim: int, time_enc: TimeEncoder,
                 mlp_hidden: int = 50, name: str = "dest", mask_self: bool = False):
        self.time_enc = time_enc
        self.mask_self = mask_self
        self.mlp = MLP(params, name, 2 * hidden_dim + time_enc.dim, mlp_hidden, 1)


class JointHead:
    def __init__(self, params: ParameterSet, hidden_dim: int, time_enc: TimeEncoder,
                 mlp_hidden: int = 50, name: str = "joint", pair_budget: int = 1 << 20):
        self.time_enc = time_enc
        self.pair_budget = pair_budget
        self.mlp = MLP(params, name, 2 * hidden_dim + time_enc.dim, mlp_hidden, 1)


@dataclass
class ForecastStep:
    dt: float
    t_abs: float
    source: int
    dest: int
    rate_total: float
    p_source: np.ndarray = field(repr=False)
    p_dest: np.ndarray = field(repr=False)


def _tile(row: Tensor, n: int) -> Tensor:
    return T.take_rows(T.reshape(row, (1, -1)), np.zeros(n, dtype=np.intp))


def intensities(head: IntensityHead, H) -> tuple[Tensor, Tensor]:
    """Per-node softplus intensities and their (floored) sum."""
    H = T.const(H)
    if H.shape[0] == 0:
        raise ValueError("empty community")
    lam = T.reshape(T.softplus(head.mlp(H)), (H.shape[0],))
    return lam, T.clamp_min(T.tsum(lam), RATE_FLOOR)


def predict_dt(rate_total: float, mode: str = "mean", rng: np.random.Generator | None = None) -> float:
    """Mean 1/rate, or an Exponential(rate) draw by inverse CDF."""
    if not rate_total > 0:
        raise ValueError(f"rate must be positive, got {rate_total}")
    if mode == "mean":
        return 1.0 / rate_total
    if mode == "sample":
        rng = rng if rng is not None else np.random.default_rng()
        return float(-np.log(1.0 - rng.random()) / rate_total)
    raise ValueError(f"unknown mode {mode!r}")


def source_log_probs(head: SourceHead, H, dt: float) -> Tensor:
    H = T.const(H)
    n = H.shape[0]
    if n == 0:
        raise ValueError("empty community")
    COUNTER.add("source", n)
    x = T.concat([H, _tile(head.time_enc(dt), n)], axis=1)
    return T.log_softmax(T.reshape(head.mlp(x), (n,)))


def dest_log_probs(head: DestHead, H, source_row: int, dt: float) -> Tensor:
    H = T.const(H)
    n = H.shape[0]
    if n == 0:
        raise ValueError("empty community")
    COUNTER.add("dest", n)
    hu = T.take_rows(H, np.full(n, source_row, dtype=np.intp))
    x = T.concat([H, hu, _tile(head.time_enc(dt), n)], axis=1)
    logits = T.reshape(head.mlp(x), (n,))
    if head.mask_self and n > 1:
        pad = np.zeros(n)
        pad[source_row] = -1e9
        logits = T.add(logits, pad)
    return T.log_softmax(logits)


def joint_log_probs(head: JointHead, H, dt: float) -> Tensor:
    """Log-probabilities over all ordered pairs, flattened as ``u * |C| + v``."""
    H = T.const(H)
    n = H.shape[0]
    if n == 0:
        raise ValueError("empty community")
    if n * n > head.pair_budget:
        raise CapacityError(f"{n * n} pairs exceed the joint-head budget of {head.pair_budget}")
    COUNTER.add("joint", n * n)
    u_idx = np.repeat(np.arange(n), n)
    v_idx = np.tile(np.arange(n), n)
    x = T.concat([T.take_rows(H, u_idx), T.take_rows(H, v_idx), _tile(head.time_enc(dt), n * n)], axis=1)
    return T.log_softmax(T.reshape(head.mlp(x), (n * n,)))


def source_distribution(head: SourceHead, H, dt: float) -> np.ndarray:
    return np.exp(source_log_probs(head, H, dt).value)


def dest_distribution(head: DestHead, H, source_row: int, dt: float) -> np.ndarray:
    return np.exp(dest_log_probs(head, H, source_row, dt).value)


def joint_distribution(head: JointHead, H, dt: float) -> np.ndarray:
    n = T.const(H).shape[0]
    return np.exp(joint_log_probs(head, H, dt).value).reshape(n, n)


def pair_log_probs_from_logits(pair_logits) -> Tensor:
    """Normalise an (n, n) matrix of pair scores into joint log-probabilities."""
    pl = T.const(pair_logits)
    n = pl.shape[0]
    return T.reshape(T.log_softmax(T.reshape(pl, (n * n,))), (n, n))


def chain_nll(logp_source: np.ndarray, logp_dest_given: np.ndarray, u: int, v: int) -> float:
    """-log p(u) - log p(v|u); ``logp_dest_given[u]`` is the row for source u."""
    return float(-logp_source[u] - logp_dest_given[u, v])


@dataclass
class ForecastHeads:
    intensity: IntensityHead
    source: SourceHead | None = None
    dest: DestHead | None = None
    joint: JointHead | None = None

    @property
    def hierarchical(self) -> bool:
        return self.joint is None


def forecast_step_greedy(heads: ForecastHeads, H, nodes: list[int], t_prev: float,
                         mode: str = "mean", rng: np.random.Generator | None = None
                         ) -> ForecastStep:
    """Pick dt (mean or sampled), then argmax source, then argmax destination.

    argmax ties resolve to the lowest row, i.e. the lowest node id.  In
    ``sample`` mode the entities are drawn from their distributions instead.
    """
    _, lam_total = intensities(heads.intensity, H)
    rate = float(lam_total.value)
    dt = predict_dt(rate, "mean" if mode == "mean" else "sample", rng)
    n = len(nodes)
    if heads.hierarchical:
        p_u = np.exp(source_log_probs(heads.source, H, dt).value)
        u = int(np.argmax(p_u)) if mode == "mean" else int(rng.choice(n, p=p_u / p_u.sum()))
        p_v = np.exp(dest_log_probs(heads.dest, H, u, dt).value)
        v = int(np.argmax(p_v)) if mode == "mean" else int(rng.choice(n, p=p_v / p_v.sum()))
    else:
        pj = np.exp(joint_log_probs(heads.joint, H, dt).value)
        k = int(np.argmax(pj)) if mode == "mean" else int(rng.choice(n * n, p=pj / pj.sum()))
        u, v = divmod(k, n)
        pj = pj.reshape(n, n)
        p_u = pj.sum(axis=1)
        p_v = pj[u] / pj[u].sum()
    return ForecastStep(dt, t_prev + dt, nodes[u], nodes[v], rate, p_u, p_v)


def write_forecast_csv(steps: list[ForecastStep], fh, time_map=None) -> None:
    """``step,source,dest,dt,t_abs``; ``time_map`` converts (dt, t_abs) to output units."""
    fh.write("step,source,dest,dt,t_abs\n")
    for i, s in enumerate(steps, start=1):
        dt, t_abs = (s.dt, s.t_abs) if time_map is None else time_map(s.dt, s.t_abs)
        fh.write(f"{i},{s.source},{s.dest},{dt!r},{t_abs!r}\n")
