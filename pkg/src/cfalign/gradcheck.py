"""Finite-difference battery over every training loss.

Each case builds a randomized scalar-valued function of one tensor and
compares its reverse-mode gradient against central differences. The battery
reports the worst relative error per case name; it backs both the CLI
self-test and the test suite.
"""

from __future__ import annotations

import numpy as np

from .adain import ChannelStats, content_loss, feature_stats, style_loss
from .heads import HEAD_KINDS, build_head, head_forward
from .losses import contrastive_combined, cross_entropy, entropy_loss, info_nce
from .membank import MemoryBank
from .tensor import Tensor, grad_check, softmax

__all__ = ["loss_battery", "BATTERY_CASES"]


def _labels(rng: np.random.Generator, n: int, c: int, unlabeled: float = 0.25) -> np.ndarray:
    lab = rng.integers(0, c, size=n)
    lab[rng.random(n) < unlabeled] = -1
    if (lab >= 0).sum() == 0:
        lab[0] = 0  # at least one labeled row so the losses are defined
    return lab


def _case_cross_entropy(rng):
    n, c = 6, 4
    labels = _labels(rng, n, c)
    x = Tensor(rng.normal(size=(n, c)), requires_grad=True)
    return lambda z: cross_entropy(softmax(z), labels), x


def _case_entropy(rng):
    x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    return lambda z: entropy_loss(softmax(z)), x


def _case_info_nce(rng):
    n, c, d = 6, 5, 4
    centers = rng.normal(size=(c, d))
    mask = np.ones(c, dtype=bool)
    mask[rng.integers(0, c)] = False
    labels = _labels(rng, n, c)
    active = np.flatnonzero(mask)
    labels[labels >= 0] = rng.choice(active, size=(labels >= 0).sum())
    x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    return lambda f: info_nce(f, labels, centers, mask, tau=0.07)[0], x


def _bank(rng, c: int, d: int) -> MemoryBank:
    bank = MemoryBank(c, d, alpha=0.9)
    bank.v_source[:] = rng.normal(size=(c, d))
    bank.v_target[:] = rng.normal(size=(c, d))
    bank.init_source[:] = rng.random(c) < 0.8
    bank.init_target[:] = rng.random(c) < 0.8
    bank.init_source[:2] = True  # keep at least two rows live per side
    bank.init_target[:2] = True
    return bank


def _case_contrastive_source(rng):
    n, c, d = 5, 4, 3
    bank = _bank(rng, c, d)
    y_s = _labels(rng, n, c)
    y_t = _labels(rng, n, c)
    f_t = Tensor(rng.normal(size=(n, d)))
    x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    return lambda f: contrastive_combined(f, y_s, f_t, y_t, bank, tau=0.07), x


def _case_contrastive_target(rng):
    n, c, d = 5, 4, 3
    bank = _bank(rng, c, d)
    y_s = _labels(rng, n, c)
    y_t = _labels(rng, n, c)
    f_s = Tensor(rng.normal(size=(n, d)))
    x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
    return lambda f: contrastive_combined(f_s, y_s, f, y_t, bank, tau=0.07), x


def _case_content(rng):
    ref = rng.normal(size=(8, 3))
    x = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
    return lambda f: content_loss(f, ref), x


def _case_style(rng):
    # keep style variances comfortably positive so sqrt stays smooth
    stats = ChannelStats(mean=rng.normal(size=3), var=rng.uniform(0.5, 2.0, size=3))
    x = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
    return lambda f: style_loss(feature_stats(f), stats), x


def _make_head_case(kind: str):
    def case(rng):
        n, c, d = 6, 4, 4
        head = build_head(kind, d, rng=rng)
        centers = rng.normal(size=(c, head.d_out))
        mask = np.ones(c, dtype=bool)
        labels = _labels(rng, n, c)
        x = Tensor(rng.normal(size=(n, d)), requires_grad=True)
        return (
            lambda f: info_nce(head_forward(head, f, training=True), labels, centers, mask, tau=0.07)[0],
            x,
        )

    return case


BATTERY_CASES = [
    ("cross_entropy", _case_cross_entropy),
    ("entropy_loss", _case_entropy),
    ("info_nce", _case_info_nce),
    ("contrastive_combined/source", _case_contrastive_source),
    ("contrastive_combined/target", _case_contrastive_target),
    ("content_loss", _case_content),
    ("style_loss", _case_style),
] + [(f"info_nce+head[{kind}]", _make_head_case(kind)) for kind in HEAD_KINDS]


def loss_battery(instances: int = 20, seed: int = 0) -> dict[str, float]:
    """Worst relative gradient error per case over `instances` random draws."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, make in BATTERY_CASES:
        errors = []
        for _ in range(instances):
            fn, x = make(rng)
            errors.append(grad_check(fn, x))
        worst[name] = max(errors)
    return worst
