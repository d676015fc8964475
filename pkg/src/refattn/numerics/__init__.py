"""Minimal N-D array engine with reverse-mode differentiation."""
from . import ndar
from .gradcheck import GradcheckResult, gradcheck, rel_error
from .init import ParamRng
from .kernels import bilinear_sample, col2im, conv2d, conv_transpose2d, im2col, unfold
from .ops import (abs_, add, concat, div, exp, gelu, getitem, l2_normalize, layer_norm,
                  leaky_relu, log, matmul, mean, mul, neg, norm, pad2d, power, relu, reshape,
                  roll, sigmoid, softmax, sqrt, square, sub, sum_, take, tanh, transpose,
                  upsample_nearest)
from .tensor import NdArray, Tape, as_array, grad_enabled, no_grad, set_debug

__all__ = [
    "NdArray", "Tape", "as_array", "no_grad", "grad_enabled", "set_debug", "ParamRng",
    "gradcheck", "GradcheckResult", "rel_error", "ndar",
    "conv2d", "conv_transpose2d", "unfold", "bilinear_sample", "im2col", "col2im",
    "add", "sub", "mul", "div", "neg", "power", "square", "exp", "log", "sqrt", "abs_",
    "tanh", "sigmoid", "relu", "leaky_relu", "gelu", "matmul", "sum_", "mean", "norm",
    "softmax", "l2_normalize", "layer_norm", "reshape", "transpose", "getitem", "take",
    "concat", "pad2d", "roll", "upsample_nearest",
]
