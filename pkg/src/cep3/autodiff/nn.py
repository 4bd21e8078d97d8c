"""Network building blocks composed from tensor ops."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParameterSet
from .tensor import Tensor


class Linear:
    def __init__(self, params: ParameterSet, name: str, n_in: int, n_out: int, bias: bool = True):
        self.n_in, self.n_out = n_in, n_out
        self.W = params.add(f"{name}.W", (n_in, n_out), "uniform", fan_in=n_in)
        self.b = params.add(f"{name}.b", (n_out,), "zeros") if bias else None

    def __call__(self, x) -> Tensor:
        y = T.matmul(x, self.W)
        return T.add(y, self.b) if self.b is not None else y


class MLP:
    """Two-layer perceptron with a tanh hidden layer and linear output."""

    def __init__(self, params: ParameterSet, name: str, n_in: int, n_hidden: int, n_out: int):
        self.fc1 = Linear(params, f"{name}.fc1", n_in, n_hidden)
        self.fc2 = Linear(params, f"{name}.fc2", n_hidden, n_out)
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x) -> Tensor:
        return self.fc2(T.tanh(self.fc1(x)))


class GRUCell:
    """Gated recurrent unit.

    r = sigmoid(W_r [x || h]),  z = sigmoid(W_z [x || h]),
    n = tanh(W_n [x || r*h]),   h' = (1 - z) * n + z * h
    """

    def __init__(self, params: ParameterSet, name: str, n_in: int, n_hidden: int):
        self.n_in, self.n_hidden = n_in, n_hidden
        self.r = Linear(params, f"{name}.r", n_in + n_hidden, n_hidden)
        self.z = Linear(params, f"{name}.z", n_in + n_hidden, n_hidden)
        self.n = Linear(params, f"{name}.n", n_in + n_hidden, n_hidden)

    def __call__(self, x, h) -> Tensor:
        return gru_cell(x, h, self)


def gru_cell(x, h, cell: GRUCell) -> Tensor:
    x, h = T.const(x), T.const(h)
    if x.shape[-1] != cell.n_in or h.shape[-1] != cell.n_hidden:
        raise ValueError(
            f"gru_cell: got x[..., {x.shape[-1]}], h[..., {h.shape[-1]}]; "
            f"expected {cell.n_in}, {cell.n_hidden}")
    xh = T.concat([x, h], axis=-1)
    r = T.sigmoid(cell.r(xh))
    z = T.sigmoid(cell.z(xh))
    n = T.tanh(cell.n(T.concat([x, T.mul(r, h)], axis=-1)))
    return T.add(T.mul(T.sub(1.0, z), n), T.mul(z, h))


class MultiHeadAttention:
    """Scaled dot-product attention with separate Q/K/V projections (no bias)."""

    def __init__(self, params: ParameterSet, name: str, d_query: int, d_key: int,
                 d_model: int, heads: int):
        if d_model % heads:
            raise ValueError(f"heads={heads} must divide attention dim {d_model}")
        self.heads, self.d_model = heads, d_model
        self.d_head = d_model // heads
        self.Wq = params.add(f"{name}.Wq", (d_query, d_model), "uniform")
        self.Wk = params.add(f"{name}.Wk", (d_key, d_model), "uniform")
        self.Wv = params.add(f"{name}.Wv", (d_key, d_model), "uniform")

    def batched(self, q, C, mask: np.ndarray) -> Tensor:
        """Attend for ``N`` queries at once.

        q: (N, d_query); C: (N, F, d_key) keys=values, padded to F rows;
        mask: (N, F) booleans, True for real rows.  Queries without any real
        row return a zero vector.
        """
        q, C = T.const(q), T.const(C)
        N, F, dk = C.shape
        h, dh = self.heads, self.d_head
        Qp = T.reshape(T.matmul(q, self.Wq), (N, h, 1, dh))
        flat = T.reshape(C, (N * F, dk))
        Kp = T.transpose(T.reshape(T.matmul(flat, self.Wk), (N, F, h, dh)), (0, 2, 3, 1))
        Vp = T.transpose(T.reshape(T.matmul(flat, self.Wv), (N, F, h, dh)), (0, 2, 1, 3))
        scores = T.mul(T.matmul(Qp, Kp), 1.0 / np.sqrt(dh))
        pad = np.where(mask, 0.0, -1e9)[:, None, None, :]
        scores = T.add(scores, np.broadcast_to(pad, (N, h, 1, F)).copy())
        out = T.reshape(T.matmul(T.softmax(scores, axis=-1), Vp), (N, self.d_model))
        any_real = mask.any(axis=1)
        if not any_real.all():
            out = T.mul(out, np.repeat(any_real[:, None].astype(float), self.d_model, axis=1))
        return out

    def __call__(self, q, K, V=None) -> Tensor:
        return multi_head_attention(q, K, self, V)


def multi_head_attention(q, K, attn: MultiHeadAttention, V=None) -> Tensor:
    """Single query vector against the rows of ``K`` (values default to ``K``).

    The concatenated head outputs are returned as a vector of size d_model.
    """
    q, K = T.const(q), T.const(K)
    V = K if V is None else T.const(V)
    if K.ndim != 2 or K.shape[0] == 0:
        raise ValueError("multi_head_attention needs a non-empty key matrix")
    if V.shape[0] != K.shape[0]:
        raise ValueError("keys and values need the same row count")
    h, dh = attn.heads, attn.d_head
    n = K.shape[0]
    Qp = T.reshape(T.matmul(T.reshape(q, (1, -1)), attn.Wq), (h, 1, dh))
    Kp = T.transpose(T.reshape(T.matmul(K, attn.Wk), (n, h, dh)), (1, 2, 0))
    Vp = T.transpose(T.reshape(T.matmul(V, attn.Wv), (n, h, dh)), (1, 0, 2))
    w = T.softmax(T.mul(T.matmul(Qp, Kp), 1.0 / np.sqrt(dh)), axis=-1)
    return T.reshape(T.matmul(w, Vp), (attn.d_model,))
