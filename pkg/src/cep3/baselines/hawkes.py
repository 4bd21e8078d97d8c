"""Per-pair self-exciting Hawkes baseline.

Each ordered pair has its own intensity

    lambda(t) = mu + alpha * sum_{t_j < t} beta * exp(-beta * (t - t_j))

with a shared, fixed decay ``beta``.  ``alpha`` is then the branching
ratio and is kept below 1.  (mu, alpha) are fitted per pair by projected,
diagonally scaled gradient descent with an Armijo line search.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..ctdg import DataError, EventStream, TemporalGraph
from ..forecaster import ForecastStep, predict_dt
from ..windows import Window
from .common import community_history, greedy_pair, pair_scores, row_index, sample_pair
from .poisson import _read_comment

log = logging.getLogger(__name__)

MU_MIN = 1e-12
ALPHA_MAX = 1.0 - 1e-6


def _recursion(times: np.ndarray, beta: float) -> np.ndarray:
    """A_i = sum_{j<i} exp(-beta (t_i - t_j))."""
    a = np.zeros(len(times))
    for i in range(1, len(times)):
        a[i] = math.exp(-beta * (times[i] - times[i - 1])) * (1.0 + a[i - 1])
    return a


def pair_nll(times: np.ndarray, mu: float, alpha: float, beta: float, t_start: float, t_end: float,
             A: np.ndarray | None = None) -> float:
    """Exact NLL on [t_start, t_end] with kernel alpha * beta * exp(-beta * tau)."""
    times = np.asarray(times, dtype=float)
    A = _recursion(times, beta) if A is None else A
    lam = mu + alpha * beta * A
    if np.any(lam <= 0):
        return math.inf
    comp = mu * (t_end - t_start) + alpha * float(np.sum(1.0 - np.exp(-beta * (t_end - times))))
    return float(comp - np.log(lam).sum())


@dataclass
class FitResult:
    mu: float
    alpha: float
    nll: float
    iterations: int
    converged: bool


def fit_pair(times: np.ndarray, t_start: float, t_end: float, beta: float = 1.0,
             fix_alpha_zero: bool = False, max_iter: int = 500, tol: float = 1e-10) -> FitResult:
    """Minimise the pair NLL over mu >= MU_MIN, 0 <= alpha <= ALPHA_MAX."""
    times = np.asarray(times, dtype=float)
    span = t_end - t_start
    if not span > 0:
        raise DataError("zero timespan")
    n = len(times)
    A = _recursion(times, beta)
    G = float(np.sum(1.0 - np.exp(-beta * (t_end - times))))
    bA = beta * A
    alpha_hi = 0.0 if fix_alpha_zero else min(ALPHA_MAX, beta * ALPHA_MAX)

    def f(x):
        lam = x[0] + x[1] * bA
        if np.any(lam <= 0):
            return math.inf
        return x[0] * span + x[1] * G - float(np.log(lam).sum())

    def project(x):
        return np.array([max(x[0], MU_MIN), min(max(x[1], 0.0), alpha_hi)])

    x = project(np.array([max(n, 1) / span * 0.5, 0.0 if fix_alpha_zero else 0.5 * alpha_hi]))
    fx = f(x)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lam = x[0] + x[1] * bA
        g = np.array([span - np.sum(1.0 / lam), G - np.sum(bA / lam)])
        h = np.array([np.sum(1.0 / lam ** 2), np.sum(bA ** 2 / lam ** 2)])
        d = -g / np.maximum(h, 1e-300)
        step = 1.0
        while True:
            xn = project(x + step * d)
            fn = f(xn)
            if fn <= fx + 1e-4 * float(g @ (xn - x)):
                break
            step *= 0.5
            if step < 1e-20:
                xn, fn = x, fx
                break
        moved = np.abs(xn - x).max()
        improvement = fx - fn
        x, fx = xn, fn
        if moved <= tol * max(1.0, np.abs(x).max()) or improvement <= tol * max(1.0, abs(fx)) * 1e-3:
            converged = True
            break
    if not converged:
        log.warning("hawkes fit did not converge after %d iterations (nll %.6g)", max_iter, fx)
    return FitResult(float(x[0]), float(x[1]), float(fx), it, converged)


@dataclass
class HawkesModel:
    """Per-pair (mu, alpha) with a shared decay; unseen pairs are Poisson with a smoothed rate."""

    params: dict[tuple[int, int], tuple[float, float]]
    t_span: float
    beta: float = 1.0
    smoothing: float = 0.5
    unconverged: int = 0
    name: str = field(default="hawkes", init=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        for (u, v), (mu, a) in self.params.items():
            if mu < 0 or a < 0 or a >= min(1.0, self.beta):
                raise ValueError(f"invalid hawkes parameters for pair ({u}, {v})")

    def default_rate(self, n: int) -> float:
        return self.smoothing / (n * n * self.t_span)

    def matrices(self, nodes) -> tuple[np.ndarray, np.ndarray]:
        nodes = sorted(int(x) for x in nodes)
        n = len(nodes)
        mu = np.full((n, n), self.default_rate(n))
        alpha = np.zeros((n, n))
        pos = row_index(nodes)
        for (u, v), (m, a) in self.params.items():
            if u in pos and v in pos:
                mu[pos[u], pos[v]] = m
                alpha[pos[u], pos[v]] = a
        return mu, alpha

    def _initial_excitation(self, graph: TemporalGraph, nodes, t_n: float) -> np.ndarray:
        """sum_j beta * exp(-beta (t_n - t_j)) per pair over community history."""
        pos = row_index(nodes)
        n = len(pos)
        E = np.zeros((n, n))
        horizon = 40.0 / self.beta
        src, dst, t = community_history(graph, nodes, t_n, since=t_n - horizon)
        for u, v, tj in zip(src.tolist(), dst.tolist(), t.tolist()):
            E[pos[u], pos[v]] += self.beta * math.exp(-self.beta * (t_n - tj))
        return E

    def truth_scores(self, graph: TemporalGraph, window: Window) -> dict[str, np.ndarray]:
        mu, alpha = self.matrices(window.nodes)
        pos = row_index(window.nodes)
        E = self._initial_excitation(graph, window.nodes, window.t_n)
        lu, lv, rate = [], [], []
        for u, v, dt in zip(window.src.tolist(), window.dst.tolist(), window.dts.tolist()):
            rate.append(float((mu + alpha * E).sum()))
            E *= math.exp(-self.beta * dt)
            a, b = pair_scores(mu + alpha * E, pos[u], pos[v])
            lu.append(a)
            lv.append(b)
            E[pos[u], pos[v]] += self.beta
        return {"logp_source": np.array(lu), "logp_dest": np.array(lv), "rate": np.array(rate)}

    def forecast(self, graph: TemporalGraph, nodes, t_n: float, K: int, mode: str = "mean",
                 rng: np.random.Generator | None = None) -> list[ForecastStep]:
        """dt = 1 / lambda(t+) (or an exponential draw), then the pair with the
        largest intensity at the predicted time."""
        nodes = sorted(int(x) for x in nodes)
        mu, alpha = self.matrices(nodes)
        E = self._initial_excitation(graph, nodes, t_n)
        steps, t = [], float(t_n)
        for _ in range(K):
            total = float((mu + alpha * E).sum())
            dt = predict_dt(total, mode, rng)
            E *= math.exp(-self.beta * dt)
            lam = mu + alpha * E
            if mode == "mean":
                u, v, p_u, p_v = greedy_pair(lam)
            else:
                u, v, p_u, p_v = sample_pair(lam, rng)
            E[u, v] += self.beta
            t += dt
            steps.append(ForecastStep(dt, t, nodes[u], nodes[v], total, p_u, p_v))
        return steps

    def to_csv(self, fh) -> None:
        fh.write(f"# t_span={self.t_span!r} beta={self.beta!r} smoothing={self.smoothing!r}\n")
        fh.write("u,v,mu,alpha\n")
        for (u, v), (m, a) in sorted(self.params.items()):
            fh.write(f"{u},{v},{m!r},{a!r}\n")

    @classmethod
    def from_csv(cls, fh) -> "HawkesModel":
        meta = _read_comment(fh)
        reader = csv.reader(fh)
        if next(reader, None) != ["u", "v", "mu", "alpha"]:
            raise DataError("expected header u,v,mu,alpha")
        params = {(int(r[0]), int(r[1])): (float(r[2]), float(r[3])) for r in reader if r}
        return cls(params, float(meta["t_span"]), float(meta.get("beta", 1.0)),
                   float(meta.get("smoothing", 0.5)))


def fit_hawkes(train: EventStream, t_start: float | None = None, t_end: float | None = None,
               beta: float = 1.0, fix_alpha_zero: bool = False, smoothing: float = 0.5,
               max_iter: int = 500) -> HawkesModel:
    """Fit every observed ordered pair independently on [t_start, t_end]."""
    if len(train) == 0:
        raise DataError("empty training stream")
    t_start = float(train.t[0]) if t_start is None else float(t_start)
    t_end = float(train.t[-1]) if t_end is None else float(t_end)
    if not t_end > t_start:
        raise DataError("zero timespan")
    by_pair: dict[tuple[int, int], list[float]] = {}
    for u, v, t in zip(train.src.tolist(), train.dst.tolist(), train.t.tolist()):
        by_pair.setdefault((u, v), []).append(t)
    if not any(len(ts) >= 2 for ts in by_pair.values()):
        raise DataError("need at least two events on one pair")
    params, bad = {}, 0
    for key in sorted(by_pair):
        res = fit_pair(np.asarray(by_pair[key]), t_start, t_end, beta, fix_alpha_zero, max_iter)
        bad += not res.converged
        params[key] = (res.mu, res.alpha)
    if bad:
        log.warning("%d of %d pair fits did not converge", bad, len(params))
    return HawkesModel(params, t_end - t_start, beta, smoothing, bad)
