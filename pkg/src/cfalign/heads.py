"""Projection heads remapping backbone features before the contrastive loss.

Five architectures, selected by name:

==========  ==================================================
``none``    identity
``linear``  Linear
``moco``    Linear, ReLU, Linear
``byol``    Linear, BatchNorm, ReLU, Linear
``simclr``  Linear, BatchNorm, ReLU, Linear, BatchNorm
==========  ==================================================

Weights and biases draw from uniform(-1/sqrt(fan_in), +1/sqrt(fan_in));
batch norms use eps 1e-5 and running-stat momentum 0.1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import RunningStats, Tensor, add, batch_norm, matmul, relu

HEAD_KINDS = ("none", "linear", "moco", "byol", "simclr")

__all__ = ["HEAD_KINDS", "Head", "LinearLayer", "BatchNormLayer", "build_head", "head_forward", "head_parameters"]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class LinearLayer:
    weight: Tensor  # (d_in, d_out)
    bias: Tensor  # (d_out,)


@dataclass
class BatchNormLayer:
    gamma: Tensor
    beta: Tensor
    running: RunningStats
    eps: float = BN_EPS


@dataclass
class Head:
    kind: str
    d_in: int
    d_out: int
    layers: list = field(default_factory=list)  # LinearLayer | BatchNormLayer | "relu"


def _linear(d_in: int, d_out: int, rng: np.random.Generator) -> LinearLayer:
    bound = 1.0 / np.sqrt(d_in)
    return LinearLayer(
        weight=Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True),
        bias=Tensor(rng.uniform(-bound, bound, size=d_out), requires_grad=True),
    )


def _bn(dim: int) -> BatchNormLayer:
    return BatchNormLayer(
        gamma=Tensor(np.ones(dim), requires_grad=True),
        beta=Tensor(np.zeros(dim), requires_grad=True),
        running=RunningStats.for_dim(dim, momentum=BN_MOMENTUM),
    )


def build_head(
    kind: str,
    d_in: int,
    d_hidden: int | None = None,
    d_out: int | None = None,
    rng: np.random.Generator | int | None = None,
) -> Head:
    """Construct a head; hidden and output dims default to the input dim."""
    if kind not in HEAD_KINDS:
        raise ConfigError(f"unknown head kind {kind!r}; choose from {HEAD_KINDS}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    d_hidden = d_in if d_hidden is None else d_hidden
    d_out = d_in if d_out is None else d_out
    if kind == "none":
        return Head(kind, d_in, d_in)
    if kind == "linear":
        layers = [_linear(d_in, d_out, rng)]
    elif kind == "moco":
        layers = [_linear(d_in, d_hidden, rng), "relu", _linear(d_hidden, d_out, rng)]
    elif kind == "byol":
        layers = [_linear(d_in, d_hidden, rng), _bn(d_hidden), "relu", _linear(d_hidden, d_out, rng)]
    else:  # simclr
        layers = [
            _linear(d_in, d_hidden, rng),
            _bn(d_hidden),
            "relu",
            _linear(d_hidden, d_out, rng),
            _bn(d_out),
        ]
    return Head(kind, d_in, d_out, layers)


def head_forward(head: Head, x: Tensor, training: bool = True) -> Tensor:
    """Apply the head to (n, d_in) features; the `none` head returns x as is."""
    if x.data.ndim != 2 or x.data.shape[1] != head.d_in:
        raise DimensionError(f"head expects (n, {head.d_in}) features, got {x.data.shape}")
    out = x
    for layer in head.layers:
        if layer == "relu":
            out = relu(out)
        elif isinstance(layer, LinearLayer):
            out = add(matmul(out, layer.weight), layer.bias)
        else:
            out = batch_norm(
                out, layer.gamma, layer.beta, running=layer.running, eps=layer.eps, training=training
            )
    return out


def head_parameters(head: Head) -> list[Tensor]:
    params: list[Tensor] = []
    for layer in head.layers:
        if isinstance(layer, LinearLayer):
            params += [layer.weight, layer.bias]
        elif isinstance(layer, BatchNormLayer):
            params += [layer.gamma, layer.beta]
    return params
