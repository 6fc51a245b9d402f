"""Differentiable dense-tensor substrate: tape, layers, parameters."""

from .tensor import (
    Tensor, as_tensor, constant, parameter, backward,
    add, sub, mul, div, neg, exp, log, tanh, relu, softplus, square,
    sum_, mean, matmul, reshape, transpose, concat, take_slice, gather_rows,
    masked_softmax, log_softmax, masked_max_pool, layer_norm,
)
from .layers import (
    AttentionParams, AttentionStats, stats,
    build_attention, build_mlp, mlp_forward, sinusoidal_pe,
    attention_dense, attention_gathered, multi_head_attention,
)
from .params import (
    ParameterStore, save_checkpoint, load_checkpoint, restore_into,
)
from .gradcheck import gradient_check

__all__ = [
    "Tensor", "as_tensor", "constant", "parameter", "backward",
    "add", "sub", "mul", "div", "neg", "exp", "log", "tanh", "relu",
    "softplus", "square", "sum_", "mean", "matmul", "reshape", "transpose",
    "concat", "take_slice", "gather_rows", "masked_softmax", "log_softmax",
    "masked_max_pool", "layer_norm",
    "AttentionParams", "AttentionStats", "stats", "build_attention",
    "build_mlp", "mlp_forward", "sinusoidal_pe", "attention_dense",
    "attention_gathered", "multi_head_attention",
    "ParameterStore", "save_checkpoint", "load_checkpoint", "restore_into",
    "gradient_check",
]
