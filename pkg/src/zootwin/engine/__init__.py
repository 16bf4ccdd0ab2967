from .functional import (
    ACTIVATIONS,
    activation,
    conv2d,
    cross_entropy,
    dropout,
    gelu,
    layer_norm,
    linear,
    maxpool2d,
    softmax,
)
from .optim import Optimizer, OptimState
from .rng import stream
from .tensor import ShapeError, Tensor, UsageError, concat, grad, matmul, parameter, precision, where

__all__ = [
    "ACTIVATIONS",
    "Optimizer",
    "OptimState",
    "ShapeError",
    "Tensor",
    "UsageError",
    "activation",
    "concat",
    "conv2d",
    "cross_entropy",
    "dropout",
    "gelu",
    "grad",
    "layer_norm",
    "linear",
    "matmul",
    "maxpool2d",
    "parameter",
    "precision",
    "softmax",
    "stream",
    "where",
]
