from . import backend
from .autograd import (Parameter, Tensor, adaptive_avg_pool_1x1, bce_with_logits,
                       concat, conv2d, l2_normalize, linear, max_pool_2x2,
                       no_grad, relu, sigmoid, softmax, stack)
from .checkpoint import config_hash, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_check
from .optim import Adam, AdamState, adam_step

__all__ = [
    "backend", "Parameter", "Tensor", "adaptive_avg_pool_1x1", "bce_with_logits",
    "concat", "conv2d", "l2_normalize", "linear", "max_pool_2x2", "no_grad",
    "relu", "sigmoid", "softmax", "stack", "config_hash", "load_checkpoint",
    "save_checkpoint", "finite_difference_check", "Adam", "AdamState", "adam_step",
]
