"""Dense 2-D tensor kernel with reverse-mode automatic differentiation."""

from .check import finite_diff_check
from .ops import (
    add,
    clamp_min,
    colmax,
    colmean,
    concat_cols,
    concat_rows,
    depthwise_conv2d,
    gather_cols,
    gather_rows,
    layer_norm,
    log,
    matmul,
    mul,
    scale,
    softmax,
    sub,
    sum_all,
    tanh,
    transpose,
)
from .tape import Tape, backward
from .tensor import DEFAULT_DTYPE, Tensor, zeros

__all__ = [
    "DEFAULT_DTYPE", "Tensor", "zeros", "Tape", "backward", "finite_diff_check",
    "add", "clamp_min", "colmax", "colmean", "concat_cols", "concat_rows",
    "depthwise_conv2d", "gather_cols", "gather_rows", "layer_norm", "log",
    "matmul", "mul", "scale", "softmax", "sub", "sum_all", "tanh", "transpose",
]
