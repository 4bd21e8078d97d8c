"""Negative log-likelihood training with teacher forcing and windowed minibatches."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Tape, backward, clip_global_norm
from .autodiff import ops as T
from .ctdg import TemporalGraph
from .windows import Window, make_windows  # noqa: F401  (re-exported)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
LOG_PROB_FLOOR = math.log(PROB_FLOOR)


@dataclass
class LossTerms:
    time_nll: float = 0.0
    entity_nll: float = 0.0
    steps: list[tuple[float, float]] = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.time_nll + self.entity_nll

    @property
    def n(self) -> int:
        return len(self.steps)

    def add(self, time_term: float, entity_term: float) -> None:
        self.time_nll += time_term
        self.entity_nll += entity_term
        self.steps.append((time_term, entity_term))

    def merge(self, other: "LossTerms") -> None:
        self.time_nll += other.time_nll
        self.entity_nll += other.entity_nll
        self.steps.extend(other.steps)


def step_loss(rate_total: float, dt_true: float, p_source: float, p_dest: float) -> LossTerms:
    """[-log rate + dt * rate] + [-log p_u - log p_v] for one event."""
    if not rate_total > 0:
        raise ValueError("rate must be positive")
    terms = LossTerms()
    time_term = -math.log(rate_total) + dt_true * rate_total
    entity = -math.log(max(p_source, PROB_FLOOR)) - math.log(max(p_dest, PROB_FLOOR))
    terms.add(time_term, entity)
    return terms


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    K: int = 200
    parallel_windows: int = 1
    seed: int = 0
    clip_norm: float = 5.0
    stride: int | None = None
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.K < 1 or self.parallel_windows < 1:
            raise ValueError("K and parallel_windows must be >= 1")


def window_loss(model, graph: TemporalGraph, window: Window, rollouts: list | None = None):
    """Per-event mean NLL tensor for one window, plus its float breakdown.

    Models with their own objective expose ``window_objective``.
    """
    if hasattr(model, "window_objective"):
        return model.window_objective(graph, window)
    terms = LossTerms()
    parts = []
    for st in model.teacher_forced(graph, window, rollouts):
        time_term = T.add(T.neg(T.log(st.rate_total)), T.mul(st.rate_total, st.dt))
        ent = T.neg(T.add(T.clamp_min(st.logp_source, LOG_PROB_FLOOR),
                          T.clamp_min(st.logp_dest, LOG_PROB_FLOOR)))
        parts.append(T.add(time_term, ent))
        terms.add(float(time_term.value), float(ent.value))
    total = T.mul(T.tsum(T.stack_scalars(parts)), 1.0 / len(parts))
    return total, terms


def window_gradients(model, graph: TemporalGraph, window: Window):
    with Tape() as tape:
        loss, terms = window_loss(model, graph, window)
    grads = backward(tape, loss)
    return model.params.collect(grads), terms


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    time_nll: float
    entity_nll: float
    events: int

    @property
    def total(self) -> float:
        return self.time_nll + self.entity_nll


class Trainer:
    """Adam on the per-window NLL; a batch holds ``parallel_windows`` windows.

    Windows in a batch are differentiated on separate tapes (in threads) and
    their gradients are summed in window order before a single update.
    """

    def __init__(self, model, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.opt = Adam(model.params, lr=cfg.lr)
        self.rng = np.random.default_rng(cfg.seed)
        self.trace: list[BatchRecord] = []
        self.skipped = 0
        self._pool = ThreadPoolExecutor(cfg.parallel_windows) if cfg.parallel_windows > 1 else None

    def train_epoch(self, graph: TemporalGraph, windows: list[Window], epoch: int) -> LossTerms:
        usable = [w for w in windows if len(w) > 0]
        self.skipped += len(windows) - len(usable)
        order = self.rng.permutation(len(usable))
        pw = self.cfg.parallel_windows
        epoch_terms = LossTerms()
        for b, start in enumerate(range(0, len(order), pw)):
            batch = [usable[i] for i in order[start:start + pw]]
            if self._pool is not None:
                results = list(self._pool.map(lambda w: window_gradients(self.model, graph, w), batch))
            else:
                results = [window_gradients(self.model, graph, w) for w in batch]
            grads = {k: np.zeros_like(v) for k, v in results[0][0].items()}
            batch_terms = LossTerms()
            for g, terms in results:
                for k in grads:
                    grads[k] += g[k]
                batch_terms.merge(terms)
            if self.cfg.clip_norm:
                clip_global_norm(grads, self.cfg.clip_norm)
            self.opt.step(grads)
            n = batch_terms.n
            self.trace.append(BatchRecord(epoch, b, batch_terms.time_nll / n, batch_terms.entity_nll / n, n))
            epoch_terms.merge(batch_terms)
        return epoch_terms

    def fit(self, graph: TemporalGraph, windows: list[Window], epochs: int | None = None,
            val: tuple[TemporalGraph, list[Window]] | None = None, checkpoint=None) -> list[dict]:
        history = []
        for ep in range(epochs if epochs is not None else self.cfg.epochs):
            terms = self.train_epoch(graph, windows, ep)
            row = {"epoch": ep, "train_loss": terms.total / max(terms.n, 1),
                   "train_time_nll": terms.time_nll / max(terms.n, 1),
                   "train_entity_nll": terms.entity_nll / max(terms.n, 1)}
            if val is not None and val[1]:
                row["val_loss"] = evaluate_loss(self.model, *val)
            history.append(row)
            log.info("epoch %d loss %.4f", ep, row["train_loss"])
            if checkpoint is not None and self.cfg.checkpoint_every and (ep + 1) % self.cfg.checkpoint_every == 0:
                checkpoint(ep)
        if self.skipped:
            log.warning("skipped %d empty windows", self.skipped)
        return history

    def write_trace(self, fh) -> None:
        fh.write("epoch,batch,time_nll,entity_nll,total\n")
        for r in self.trace:
            fh.write(f"{r.epoch},{r.batch},{r.time_nll!r},{r.entity_nll!r},{r.total!r}\n")

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()


def evaluate_loss(model, graph: TemporalGraph, windows: list[Window]) -> float:
    """Per-event mean NLL without recording a tape."""
    total = LossTerms()
    for w in windows:
        if len(w):
            total.merge(window_loss(model, graph, w)[1])
    return total.total / max(total.n, 1)


def train_epoch(model, graph: TemporalGraph, batches: list[Window], cfg: TrainConfig,
                trainer: Trainer | None = None, epoch: int = 0) -> list[BatchRecord]:
    trainer = trainer or Trainer(model, cfg)
    before = len(trainer.trace)
    trainer.train_epoch(graph, batches, epoch)
    return trainer.trace[before:]
