"""Shared fixtures: a finite-difference gradient oracle and hypothesis profiles."""
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cep3.autodiff import Tape, backward
from cep3.ctdg import EventStream

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FD_STEP = 1e-5
FD_TOL = 1e-4


def analytic_grads(loss_fn, tensors):
    with Tape() as tape:
        loss = loss_fn()
    g = backward(tape, loss)
    return [np.array(g[t]) if t in g else np.zeros_like(t.value) for t in tensors]


def numeric_grads(loss_fn, tensors, step: float = FD_STEP):
    out = []
    for t in tensors:
        g = np.zeros_like(t.value)
        flat, gflat = t.value.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = float(loss_fn().value)
            flat[i] = keep - step
            down = float(loss_fn().value)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * step)
        out.append(g)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    num = float(np.linalg.norm(a - b))
    den = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-8)
    return num / den


def grad_check(loss_fn, tensors, step: float = FD_STEP) -> float:
    """Worst per-tensor relative error between tape and central differences."""
    a = analytic_grads(loss_fn, tensors)
    n = numeric_grads(loss_fn, tensors, step)
    return max(rel_error(x, y) for x, y in zip(a, n))


@pytest.fixture
def gradcheck():
    return grad_check


def make_stream(rows, node_count=None):
    """EventStream from (u, v, t) triples without id compaction."""
    rows = sorted(rows, key=lambda r: r[2])
    src = [r[0] for r in rows]
    dst = [r[1] for r in rows]
    t = [r[2] for r in rows]
    return EventStream(src, dst, t, node_count=node_count)
