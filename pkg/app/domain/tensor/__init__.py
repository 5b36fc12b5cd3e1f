from app.domain.tensor.ops import (
    add,
    add_channel,
    avg_downsample2x,
    concat,
    conv2d,
    dropout,
    group_norm,
    linear,
    mul,
    nearest_upsample2x,
    reshape,
    scale,
    silu,
    sub,
    sum_all,
)
from app.domain.tensor.tensor import Gradients, Tape, Tensor, active_tape, constant, parameter

__all__ = [
    "Gradients",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "add_channel",
    "avg_downsample2x",
    "concat",
    "constant",
    "conv2d",
    "dropout",
    "group_norm",
    "linear",
    "mul",
    "nearest_upsample2x",
    "parameter",
    "reshape",
    "scale",
    "silu",
    "sub",
    "sum_all",
]
