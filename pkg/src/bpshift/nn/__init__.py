"""Minimal numpy deep-learning core: autograd tensors, layers, Adam."""

from .functional import (
    conv1d,
    cross_entropy,
    dense,
    dropout,
    global_average_pool,
    instance_norm,
    max_pool,
    prelu,
    softmax,
    softmax_attention,
)
from .params import ParameterSet, adam_step
from .tensor import Tensor, concat, no_grad

__all__ = [
    "Tensor",
    "ParameterSet",
    "adam_step",
    "concat",
    "conv1d",
    "cross_entropy",
    "dense",
    "dropout",
    "global_average_pool",
    "instance_norm",
    "max_pool",
    "no_grad",
    "prelu",
    "softmax",
    "softmax_attention",
]
