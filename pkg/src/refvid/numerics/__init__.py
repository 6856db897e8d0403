"""Dependency-light numeric kernels with reverse-mode gradient support."""

from .functional import (
    attention,
    bilinear_resize2d,
    conv1d_temporal,
    conv1d_video,
    conv2d,
    gaussian_kernel1d,
    group_norm,
    linear,
    lowpass_gaussian,
    resize_bilinear,
    warp_bilinear,
)
from .module import Module, Parameter
from .tensor import (
    GradTape,
    Tensor,
    add,
    clip,
    concat,
    div,
    exp,
    log,
    matmul,
    mul,
    reshape,
    sigmoid,
    silu,
    softmax,
    sqrt,
    sub,
    tabs,
    take,
    tanh,
    tmean,
    transpose,
    tsum,
)

__all__ = [
    "GradTape", "Module", "Parameter", "Tensor",
    "add", "attention", "bilinear_resize2d", "clip", "concat",
    "conv1d_temporal", "conv1d_video", "conv2d", "div", "exp",
    "gaussian_kernel1d", "group_norm", "linear", "log", "lowpass_gaussian",
    "matmul", "mul", "reshape", "resize_bilinear", "sigmoid", "silu",
    "softmax", "sqrt", "sub", "tabs", "take", "tanh", "tmean", "transpose",
    "tsum", "warp_bilinear",
]
