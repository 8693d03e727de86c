"""Minimal reverse-mode autodiff engine: tensors, a tape, ops, Nadam."""

from mmtp.engine.tensor import (
    Tensor,
    Tape,
    as_tensor,
    backward,
    active_dtype,
    set_precision,
    extended_precision,
    seed,
    generator,
)
from mmtp.engine.ops import (
    add,
    sub,
    mul,
    scale,
    exp,
    log,
    tanh,
    sigmoid,
    elu,
    huber,
    matmul,
    matmul_vec,
    softmax_masked,
    layer_norm,
    conv1d,
    dropout,
    reshape,
    transpose,
    swap_last,
    concat,
    stack,
    unstack,
    split,
    getitem,
    take_rows,
    sum_,
    mean,
    max_pool,
    LSTMParams,
    lstm_forward,
    LAYER_NORM_EPS,
)
from mmtp.engine.optim import Nadam, clip_global_norm, global_norm

__all__ = [
    "Tensor", "Tape", "as_tensor", "backward", "active_dtype", "set_precision",
    "extended_precision", "seed", "generator",
    "add", "sub", "mul", "scale", "exp", "log", "tanh", "sigmoid", "elu", "huber",
    "matmul", "matmul_vec", "softmax_masked", "layer_norm", "conv1d", "dropout",
    "reshape", "transpose", "swap_last", "concat", "stack", "unstack", "split",
    "getitem", "take_rows",
    "sum_", "mean", "max_pool", "LSTMParams", "lstm_forward", "LAYER_NORM_EPS",
    "Nadam", "clip_global_norm", "global_norm",
]
