from .tensor import Tensor, as_tensor, concat, matmul, no_grad, stack
from .ops import ShapeError, conv2d, fc, l2_penalty, lstm_cell, maxpool2d, mse, out_size, softmax, softmax_ce
from .module import Conv2d, Linear, LSTMCell, Module
from .optim import AdamState, PlateauHalving, adam_step, clip_grad_norm

__all__ = [
    "Tensor", "as_tensor", "concat", "matmul", "no_grad", "stack",
    "ShapeError", "conv2d", "fc", "l2_penalty", "lstm_cell", "maxpool2d", "mse", "out_size",
    "softmax", "softmax_ce",
    "Conv2d", "Linear", "LSTMCell", "Module",
    "AdamState", "PlateauHalving", "adam_step", "clip_grad_norm",
]
