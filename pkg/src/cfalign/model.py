"""Per-pixel segmentation network: shared MLP backbone plus linear classifier.

Every pixel is classified independently from its channel vector. An image
batch (b, c, h, w) flattens to a pixel matrix (b*h*w, c) before the forward
pass; prediction grids reshape back afterwards. Keeping the backbone
per-pixel means every feature-space loss sees one row per pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adain import to_pixels
from .errors import ConfigError, DimensionError
from .heads import LinearLayer
from .tensor import Tensor, add, matmul, relu, softmax

__all__ = [
    "SegModel",
    "build_model",
    "model_features",
    "model_probs",
    "model_parameters",
    "predict_labels",
]


@dataclass
class SegModel:
    channels: int
    hidden_dim: int
    feature_dim: int
    classes: int
    enc1: LinearLayer
    enc2: LinearLayer
    classifier: LinearLayer


def _linear(d_in: int, d_out: int, rng: np.random.Generator) -> LinearLayer:
    bound = 1.0 / np.sqrt(d_in)
    return LinearLayer(
        weight=Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)), requires_grad=True),
        bias=Tensor(rng.uniform(-bound, bound, size=d_out), requires_grad=True),
    )


def build_model(
    channels: int,
    hidden_dim: int,
    feature_dim: int,
    classes: int,
    rng: np.random.Generator | int | None = None,
) -> SegModel:
    """Initialize all layers with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    if min(channels, hidden_dim, feature_dim, classes) <= 0:
        raise ConfigError(
            f"model dims must be positive, got channels={channels} hidden={hidden_dim} "
            f"features={feature_dim} classes={classes}"
        )
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    return SegModel(
        channels=channels,
        hidden_dim=hidden_dim,
        feature_dim=feature_dim,
        classes=classes,
        enc1=_linear(channels, hidden_dim, rng),
        enc2=_linear(hidden_dim, feature_dim, rng),
        classifier=_linear(feature_dim, classes, rng),
    )


def model_features(model: SegModel, pixels: Tensor) -> Tensor:
    """Backbone forward: (n, channels) pixel rows to (n, feature_dim) rows."""
    if pixels.data.ndim != 2 or pixels.data.shape[1] != model.channels:
        raise DimensionError(
            f"backbone expects (n, {model.channels}) pixels, got {pixels.data.shape}"
        )
    hidden = relu(add(matmul(pixels, model.enc1.weight), model.enc1.bias))
    return add(matmul(hidden, model.enc2.weight), model.enc2.bias)


def model_probs(model: SegModel, features: Tensor) -> Tensor:
    """Classifier forward: (n, feature_dim) to (n, classes) probability rows."""
    if features.data.ndim != 2 or features.data.shape[1] != model.feature_dim:
        raise DimensionError(
            f"classifier expects (n, {model.feature_dim}) features, got {features.data.shape}"
        )
    logits = add(matmul(features, model.classifier.weight), model.classifier.bias)
    return softmax(logits)


def model_parameters(model: SegModel) -> list[Tensor]:
    params = []
    for layer in (model.enc1, model.enc2, model.classifier):
        params += [layer.weight, layer.bias]
    return params


def predict_labels(model: SegModel, images: np.ndarray) -> np.ndarray:
    """Forward-only argmax labels for an image batch (b, c, h, w)."""
    b, _, h, w = images.shape
    feats = model_features(model, Tensor(to_pixels(images)))
    probs = model_probs(model, feats)
    return probs.data.argmax(axis=1).reshape(b, h, w)
