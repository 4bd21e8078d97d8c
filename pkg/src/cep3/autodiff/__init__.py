from . import tensor as ops
from .nn import MLP, GRUCell, Linear, MultiHeadAttention, gru_cell, multi_head_attention
from .optim import Adam, AdamState, adam_step, clip_global_norm
from .params import ParameterSet
from .tensor import Tape, Tensor, active_tape, backward, const, no_grad

__all__ = [
    "Adam", "AdamState", "GRUCell", "Linear", "MLP", "MultiHeadAttention", "ParameterSet",
    "Tape", "Tensor", "active_tape", "adam_step", "backward", "clip_global_norm", "const",
    "gru_cell", "multi_head_attention", "no_grad", "ops",
]
