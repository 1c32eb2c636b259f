"""Minimal dense tensor library with reverse-mode differentiation."""
from .checkpoint import load_arrays, save_arrays
from .lstm import available_backends, get_backend, lstm, recurrence, set_backend
from .optim import Adam, AdamState, adam_step, clip_grad_norm
from .params import ModelParams
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    add_bias,
    as_tensor,
    concat,
    dropout,
    elementwise,
    embedding,
    expand,
    getitem,
    linear,
    make_op,
    matmul,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_masked,
    split,
    stack,
    sub,
    sum_,
    swapaxes,
    take_rows,
    tanh,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "ModelParams", "Tape", "Tensor", "active_tape", "adam_step", "add",
    "add_bias", "as_tensor", "available_backends", "clip_grad_norm", "concat", "dropout",
    "elementwise", "embedding", "expand", "get_backend", "getitem", "linear", "load_arrays",
    "lstm", "make_op", "matmul", "mul", "neg", "no_grad", "recurrence", "relu", "reshape",
    "save_arrays", "scale", "set_backend", "sigmoid", "softmax_masked", "split", "stack", "sub",
    "sum_", "swapaxes", "take_rows", "tanh", "transpose",
]
