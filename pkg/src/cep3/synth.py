"""Ground-truth point-process simulators and exact likelihood oracles.

Per-pair processes are independent.  Hawkes pairs use the kernel
``alpha * exp(-beta * tau)`` (branching ratio alpha / beta, stable when
alpha < beta).  Each pair draws from its own generator seeded by
``splitmix64(splitmix64(seed) + pair_index)``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import integrate

from .ctdg import EventStream

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def pair_seed(seed: int, index: int) -> int:
    """Stream seed of the ``index``-th pair: splitmix64(splitmix64(seed) + index)."""
    return splitmix64((splitmix64(seed & _MASK64) + index) & _MASK64)


@dataclass(frozen=True)
class PairProcess:
    kind: str               # "poisson" | "hawkes"
    rate: float = 0.0       # poisson intensity, or hawkes base rate mu
    alpha: float = 0.0
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("poisson", "hawkes"):
            raise ValueError(f"unknown process kind {self.kind!r}")
        if not (np.isfinite(self.rate) and self.rate >= 0):
            raise ValueError("rates must be finite and non-negative")
        if self.kind == "hawkes":
            if self.alpha < 0 or self.beta <= 0:
                raise ValueError("hawkes needs alpha >= 0 and beta > 0")
            if self.alpha >= self.beta:
                raise ValueError(f"unstable hawkes: alpha={self.alpha} >= beta={self.beta}")


@dataclass
class GroundTruthSpec:
    nodes: list[int]
    pairs: dict[tuple[int, int], PairProcess]
    horizon: float
    seed: int = 0
    communities: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        members = set(self.nodes)
        for (u, v) in self.pairs:
            if u not in members or v not in members:
                raise ValueError(f"pair ({u}, {v}) uses a node outside the node set")

    def total_rate(self, nodes=None) -> float:
        """Long-run event rate of pairs inside ``nodes`` (all pairs by default)."""
        keep = set(self.nodes if nodes is None else nodes)
        out = 0.0
        for (u, v), p in self.pairs.items():
            if u in keep and v in keep:
                out += p.rate if p.kind == "poisson" else p.rate / (1.0 - p.alpha / p.beta)
        return out

    def to_json(self) -> str:
        return json.dumps({
            "nodes": self.nodes, "horizon": self.horizon, "seed": self.seed,
            "communities": self.communities,
            "pairs": [{"u": u, "v": v, **asdict(p)} for (u, v), p in sorted(self.pairs.items())],
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GroundTruthSpec":
        d = json.loads(text)
        pairs = {(int(p["u"]), int(p["v"])): PairProcess(p["kind"], p["rate"], p.get("alpha", 0.0),
                                                         p.get("beta", 1.0))
                 for p in d["pairs"]}
        return cls([int(v) for v in d["nodes"]], pairs, float(d["horizon"]), int(d.get("seed", 0)),
                   [list(c) for c in d.get("communities", [])])


@dataclass
class ThinningStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposed if self.proposed else 1.0


def simulate_poisson(rate: float, horizon: float, rng: np.random.Generator) -> np.ndarray:
    if rate <= 0:
        return np.zeros(0)
    out = []
    t = rng.exponential(1.0 / rate)
    while t <= horizon:
        out.append(t)
        t += rng.exponential(1.0 / rate)
    return np.asarray(out)


def simulate_hawkes(mu: float, alpha: float, beta: float, horizon: float,
                    rng: np.random.Generator, stats: ThinningStats | None = None) -> np.ndarray:
    """Ogata thinning; between events the intensity only decays, so the
    intensity just after the current time bounds it until the next event."""
    stats = stats if stats is not None else ThinningStats()
    out = []
    t, excite = 0.0, 0.0
    while True:
        bound = mu + excite
        if bound <= 0:
            break
        w = rng.exponential(1.0 / bound)
        t += w
        if t > horizon:
            break
        excite *= np.exp(-beta * w)
        lam = mu + excite
        assert lam <= bound * (1 + 1e-12), "thinning bound violated"
        stats.proposed += 1
        if rng.random() * bound <= lam:
            stats.accepted += 1
            out.append(t)
            excite += alpha
    return np.asarray(out)


def simulate(spec: GroundTruthSpec) -> EventStream:
    """Simulate every pair independently and merge into one sorted stream."""
    src, dst, ts, order_key = [], [], [], []
    stats = ThinningStats()
    for idx, ((u, v), proc) in enumerate(sorted(spec.pairs.items())):
        rng = np.random.default_rng(pair_seed(spec.seed, idx))
        if proc.kind == "poisson":
            times = simulate_poisson(proc.rate, spec.horizon, rng)
        else:
            times = simulate_hawkes(proc.rate, proc.alpha, proc.beta, spec.horizon, rng, stats)
        src.extend([u] * len(times))
        dst.extend([v] * len(times))
        ts.extend(times.tolist())
        order_key.extend([idx] * len(times))
    if stats.proposed:
        log.info("thinning acceptance %.3f (%d/%d)", stats.acceptance, stats.accepted, stats.proposed)
    ts_a = np.asarray(ts, dtype=float)
    order = np.lexsort((np.asarray(order_key), ts_a)) if len(ts_a) else np.zeros(0, dtype=int)
    node_count = max(spec.nodes) + 1 if spec.nodes else 0
    return EventStream(np.asarray(src, dtype=np.int64)[order], np.asarray(dst, dtype=np.int64)[order],
                       ts_a[order], None, node_count,
                       {"synthetic": True, "horizon": spec.horizon, "seed": spec.seed})


# ---------------------------------------------------------------------------
# likelihood oracles


def hawkes_nll_recursive(times: np.ndarray, mu: float, alpha: float, beta: float,
                         t_end: float, t_start: float = 0.0) -> float:
    """Exact NLL on [t_start, t_end] with kernel alpha * exp(-beta * tau)."""
    times = np.asarray(times, dtype=float)
    ll = 0.0
    a = 0.0
    prev = None
    for t in times:
        if prev is not None:
            a = np.exp(-beta * (t - prev)) * (1.0 + a)
        lam = mu + alpha * a
        ll += np.log(lam)
        prev = t
    compensator = mu * (t_end - t_start) + (alpha / beta) * np.sum(1.0 - np.exp(-beta * (t_end - times)))
    return float(compensator - ll)


def hawkes_intensity(t: float, times: np.ndarray, mu: float, alpha: float, beta: float) -> float:
    past = times[times < t]
    return float(mu + alpha * np.exp(-beta * (t - past)).sum())


def hawkes_nll_quadrature(times: np.ndarray, mu: float, alpha: float, beta: float,
                          t_end: float, t_start: float = 0.0) -> float:
    """Same NLL by summing the intensity directly and integrating it numerically."""
    times = np.asarray(times, dtype=float)
    ll = sum(np.log(hawkes_intensity(t, times, mu, alpha, beta)) for t in times)
    knots = np.concatenate([[t_start], times, [t_end]])
    integral = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        if b > a:
            val, _ = integrate.quad(lambda s: hawkes_intensity(s, times, mu, alpha, beta), a, b,
                                    epsabs=1e-12, epsrel=1e-12, limit=200)
            integral += val
    return float(integral - ll)


def poisson_nll(n_events: int, rate: float, duration: float) -> float:
    if rate <= 0:
        return 0.0 if n_events == 0 else float("inf")
    return float(-n_events * np.log(rate) + rate * duration)


def oracle_nll(spec: GroundTruthSpec, stream: EventStream, method: str = "recursion") -> float:
    """NLL of ``stream`` on [0, horizon] under the ground-truth intensities."""
    if method not in ("recursion", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    total = 0.0
    for (u, v), p in spec.pairs.items():
        times = stream.t[(stream.src == u) & (stream.dst == v)]
        if p.kind == "poisson":
            total += poisson_nll(len(times), p.rate, spec.horizon)
        elif method == "recursion":
            total += hawkes_nll_recursive(times, p.rate, p.alpha, p.beta, spec.horizon)
        else:
            total += hawkes_nll_quadrature(times, p.rate, p.alpha, p.beta, spec.horizon)
    return total


# ---------------------------------------------------------------------------
# presets


def community_preset(kind: str = "poisson", n_communities: int = 2, size: int = 6,
                     rate: float = 0.05, alpha: float = 0.0, beta: float = 1.0,
                     horizon: float = 1000.0, seed: int = 0, self_loops: bool = False
                     ) -> GroundTruthSpec:
    """Dense in-community pair processes and no cross-community events.

    With ``kind="hawkes"`` each ordered pair self-excites with the given
    ``alpha``/``beta``; ``rate`` is its base rate.
    """
    nodes = list(range(n_communities * size))
    comms = [list(range(q * size, (q + 1) * size)) for q in range(n_communities)]
    pairs = {}
    for c in comms:
        for u in c:
            for v in c:
                if u == v and not self_loops:
                    continue
                pairs[(u, v)] = PairProcess(kind, rate, alpha if kind == "hawkes" else 0.0, beta)
    return GroundTruthSpec(nodes, pairs, horizon, seed, comms)


PRESETS = {
    "poisson": dict(kind="poisson", rate=0.05),
    "hawkes": dict(kind="hawkes", rate=0.01, alpha=0.8, beta=1.0),
    # long memory: branching ratio alpha/beta = 0.9 over a ~10 time-unit kernel
    "hawkes_slow": dict(kind="hawkes", rate=0.005, alpha=0.09, beta=0.1),
}
