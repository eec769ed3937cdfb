from .tensor import (
    Tensor,
    add,
    backward_pass,
    broadcast_to,
    concat,
    conv2d,
    cos,
    exp,
    gelu,
    grad,
    jvp,
    matmul,
    mul,
    param,
    reciprocal,
    reduce_mean,
    reduce_sum,
    reshape,
    sin,
    spectral_mul,
    stop_gradient,
    sub,
    transpose,
)
from .optim import AdamState, adam_step
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "backward_pass", "broadcast_to", "concat", "conv2d",
    "cos", "exp", "gelu", "grad", "jvp", "matmul", "mul", "param", "reciprocal",
    "reduce_mean", "reduce_sum", "reshape", "sin", "spectral_mul",
    "stop_gradient", "sub", "transpose",
    "AdamState", "adam_step",
    "CheckpointFormatError", "load_checkpoint", "save_checkpoint",
]
