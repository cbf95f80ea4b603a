from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import SGD, SgdConfig, sgd_step
from .tensor import (
    Tensor,
    avg_pool2d,
    batch_norm,
    conv2d,
    cosine_distance,
    log_softmax,
    matmul,
    no_grad,
    relu,
    softmax,
    softmax_cross_entropy,
    stop_gradient,
)

__all__ = [
    "SGD", "SgdConfig", "Tensor", "avg_pool2d", "batch_norm", "conv2d", "cosine_distance",
    "load_checkpoint", "log_softmax", "matmul", "nn", "no_grad", "relu", "save_checkpoint",
    "sgd_step", "softmax", "softmax_cross_entropy", "stop_gradient",
]
