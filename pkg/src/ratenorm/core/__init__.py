"""Tensor math, reverse-mode differentiation and layers for small networks."""

from ratenorm.core.tensor import Param, Tensor, zero_grads
from ratenorm.core.ops import (
    ZeroVectorWarning,
    affine_forward,
    avgpool2d,
    clip_interval,
    conv2d_forward,
    cosine_similarity,
    cross_entropy_loss,
    flatten,
    omega,
    relu,
    sigmoid,
)
from ratenorm.core.layers import LayerSpec, Network, infer_shapes
from ratenorm.core.optim import SGD, check_gradients, grad_check, sgd_step

__all__ = [
    "Param",
    "Tensor",
    "zero_grads",
    "ZeroVectorWarning",
    "affine_forward",
    "avgpool2d",
    "clip_interval",
    "conv2d_forward",
    "cosine_similarity",
    "cross_entropy_loss",
    "flatten",
    "omega",
    "relu",
    "sigmoid",
    "LayerSpec",
    "Network",
    "infer_shapes",
    "SGD",
    "check_gradients",
    "grad_check",
    "sgd_step",
]
