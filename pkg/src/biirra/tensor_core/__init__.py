"""Minimal dense tensor engine with reverse-mode gradients."""

from . import nn, ops
from .gradcheck import NondeterministicFunction, finite_difference_check
from .nn import ParamStore, attention_block, multi_head_attention
from .ops import (
    concat,
    cosine_similarity,
    cross_entropy,
    detach,
    embedding,
    gelu,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    scale,
    softmax,
)
from .tensor import Parameter, Tensor, backward, grad_enabled, no_grad

__all__ = [
    "NondeterministicFunction",
    "ParamStore",
    "Parameter",
    "Tensor",
    "attention_block",
    "backward",
    "concat",
    "cosine_similarity",
    "cross_entropy",
    "detach",
    "embedding",
    "finite_difference_check",
    "gelu",
    "grad_enabled",
    "layer_norm",
    "linear",
    "log",
    "matmul",
    "mean",
    "multi_head_attention",
    "nn",
    "no_grad",
    "ops",
    "scale",
    "softmax",
]
