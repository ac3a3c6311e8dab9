"""Training loop joining coarse statistics transfer, entropy minimization,
and class-wise contrastive alignment over momentum memory banks.

Each iteration samples one batch per domain, optionally renormalizes one
side toward the other domain's channel statistics, forwards the per-pixel
backbone and classifier, assembles the enabled loss terms, and takes one
plain gradient-descent step.

Three RNG streams split off the run seed: parameter init, batch order, and
style-autoencoder fitting. Batch indices come from their own stream and are
drawn every iteration regardless of toggles, so two runs that differ only
in enabled loss terms see the same image sequence.

Two memory banks run in parallel: one over backbone features (it drives
pseudo-label assignment) and one over head outputs (it feeds the
contrastive loss). With the identity head they hold identical rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adain import (
    ChannelStats,
    StyleNet,
    adain_transfer,
    channel_stats,
    encode,
    style_net_transfer,
    to_pixels,
    train_style_net,
)
from .config import RunConfig
from .data import Dataset
from .errors import DivergenceError
from .heads import Head, build_head, head_forward, head_parameters
from .kernels import label_sums
from .losses import contrastive_combined, cross_entropy, entropy_loss, total_objective
from .membank import (
    MemoryBank,
    assign_pseudo_labels,
    class_centers,
    pseudo_label_accuracy,
    update_bank,
)
from .model import SegModel, build_model, model_features, model_parameters, model_probs
from .tensor import Graph, Tensor, backward, zero_grads

__all__ = [
    "METRICS_COLUMNS",
    "MetricsRecord",
    "StyleContext",
    "TrainState",
    "init_state",
    "train",
    "metrics_to_csv",
    "save_metrics_csv",
    "warm_start_banks",
]

METRICS_COLUMNS = ("iteration", "ce", "entropy", "contra", "total", "pseudo_acc", "labeled_frac")


@dataclass
class MetricsRecord:
    """One training iteration's loss values and pseudo-label diagnostics."""

    iteration: int
    ce: float
    entropy: float
    contra: float
    total: float
    pseudo_acc: float
    labeled_frac: float

    def row(self) -> str:
        values = (self.ce, self.entropy, self.contra, self.total, self.pseudo_acc, self.labeled_frac)
        return ",".join([str(self.iteration)] + [repr(float(v)) for v in values])


def metrics_to_csv(records: list[MetricsRecord]) -> str:
    # repr keeps full float precision, so equal runs give equal bytes
    return "\n".join([",".join(METRICS_COLUMNS)] + [r.row() for r in records]) + "\n"


def save_metrics_csv(records: list[MetricsRecord], path: str | Path) -> None:
    Path(path).write_text(metrics_to_csv(records))


@dataclass
class StyleContext:
    """Frozen statistics (and optional autoencoder) applied to one domain's batches."""

    direction: str
    stats: ChannelStats  # image-space statistics of the style domain
    eps: float = 1e-8
    net: StyleNet | None = None
    net_stats: ChannelStats | None = None  # encoder-space style statistics

    def apply(self, images: np.ndarray) -> np.ndarray:
        if self.net is not None:
            return style_net_transfer(self.net, images, self.net_stats, self.eps)
        return adain_transfer(images, self.stats, self.eps)


@dataclass
class TrainState:
    """Everything a run owns: parameters, banks, and the frozen style context."""

    config: RunConfig
    classes: int
    channels: int
    model: SegModel
    head: Head
    bank_feat: MemoryBank  # backbone space, drives pseudo-labeling
    bank_head: MemoryBank  # head space, feeds the contrastive loss
    style: StyleContext | None = None

    def parameters(self):
        return model_parameters(self.model) + head_parameters(self.head)


def init_state(config: RunConfig, classes: int, channels: int) -> TrainState:
    """Build model, head, and empty banks from the init RNG stream."""
    rng_init = np.random.default_rng([config.seed, 0])
    model = build_model(channels, config.hidden_dim, config.feature_dim, classes, rng_init)
    head = build_head(
        config.head, config.feature_dim, config.head_hidden_dim, config.head_out_dim, rng_init
    )
    return TrainState(
        config=config,
        classes=classes,
        channels=channels,
        model=model,
        head=head,
        bank_feat=MemoryBank(classes, config.feature_dim, alpha=config.alpha),
        bank_head=MemoryBank(classes, head.d_out, alpha=config.alpha),
    )


def _build_style(config: RunConfig, data: Dataset) -> StyleContext:
    """Fit the style context once, before training starts.

    Image-space statistics always come from the style domain's whole training
    split. When the autoencoder route is on, it is trained here and the
    encoder-space style statistics are frozen from the fitted encoder.
    """
    if config.transfer_direction == "source_to_target":
        content, style = data.source_train, data.target_train
    else:
        content, style = data.target_train, data.source_train
    ctx = StyleContext(
        direction=config.transfer_direction,
        stats=channel_stats(style.images),
        eps=config.adain_eps,
    )
    if config.style_net:
        net, _ = train_style_net(
            content.images,
            style.images,
            dim=config.style_net_dim,
            iterations=config.style_iters,
            learning_rate=config.style_lr,
            style_weight=config.style_weight,
            eps=config.adain_eps,
            seed=[config.seed, 2],
        )
        feats = encode(net, Tensor(to_pixels(style.images))).data
        ctx.net = net
        ctx.net_stats = ChannelStats(mean=feats.mean(axis=0), var=feats.var(axis=0))
    return ctx


def warm_start_banks(state: TrainState, data: Dataset, chunk: int = 32) -> None:
    """Seed both banks' source rows from a full labeled pass over source train.

    Uses eval-mode head forwards so batch-norm running statistics stay at
    their initialization. Source images are transferred first when the run
    transfers them during training, so the seeded centers live in the same
    space the loop will populate.
    """
    images, labels = data.source_train.images, data.source_train.labels
    sums_f = np.zeros((state.classes, state.bank_feat.feature_dim))
    sums_h = np.zeros((state.classes, state.bank_head.feature_dim))
    counts = np.zeros(state.classes, dtype=np.int64)
    for start in range(0, len(images), chunk):
        img = images[start : start + chunk]
        if state.style is not None and state.style.direction == "source_to_target":
            img = state.style.apply(img)
        lab = labels[start : start + chunk].reshape(-1)
        f = model_features(state.model, Tensor(to_pixels(img)))
        h = head_forward(state.head, f, training=False)
        sf, c = label_sums(f.data, lab, state.classes)
        sh, _ = label_sums(h.data, lab, state.classes)
        sums_f += sf
        sums_h += sh
        counts += c
    present = counts > 0
    for bank, sums in ((state.bank_feat, sums_f), (state.bank_head, sums_h)):
        bank.v_source[present] = sums[present] / counts[present, None]
        bank.init_source[present] = True


def _update_banks_and_label(state: TrainState, f_s, h_s, lab_s, f_t, h_t) -> np.ndarray:
    """One iteration of bank bookkeeping; returns target pseudo-labels.

    Order: fold the source batch into the banks first, then assign target
    pseudo-labels against the refreshed source rows, then fold the labeled
    target rows in. Centers are read as plain arrays, so no gradient ever
    reaches the banks.
    """
    c = state.classes
    means_f, counts = class_centers(f_s.data, lab_s, c)
    means_h, _ = class_centers(h_s.data, lab_s, c)
    update_bank(state.bank_feat, means_f, counts, "source")
    update_bank(state.bank_head, means_h, counts, "source")
    if int(state.bank_feat.init_source.sum()) >= 2:
        pseudo = assign_pseudo_labels(f_t.data, state.bank_feat, state.config.threshold)
    else:
        # margin needs two centers; until then nothing is labeled
        pseudo = np.full(f_t.data.shape[0], -1, dtype=np.int64)
    t_means_f, t_counts = class_centers(f_t.data, pseudo, c)
    t_means_h, _ = class_centers(h_t.data, pseudo, c)
    update_bank(state.bank_feat, t_means_f, t_counts, "target")
    update_bank(state.bank_head, t_means_h, t_counts, "target")
    return pseudo


def _step(
    state: TrainState,
    params: list[Tensor],
    img_s: np.ndarray,
    lab_s: np.ndarray,
    img_t: np.ndarray,
    diag_t: np.ndarray,
    iteration: int,
) -> MetricsRecord:
    cfg = state.config
    pseudo_acc = 0.0
    labeled_frac = 0.0
    with Graph() as g:
        f_s = model_features(state.model, Tensor(to_pixels(img_s)))
        ce = cross_entropy(model_probs(state.model, f_s), lab_s)
        ent = 0.0
        contra = 0.0
        if cfg.entropy or cfg.contrastive:
            f_t = model_features(state.model, Tensor(to_pixels(img_t)))
        if cfg.entropy:
            ent = entropy_loss(model_probs(state.model, f_t))
        if cfg.contrastive:
            h_s = head_forward(state.head, f_s, training=True)
            h_t = head_forward(state.head, f_t, training=True)
            pseudo = _update_banks_and_label(state, f_s, h_s, lab_s, f_t, h_t)
            contra = contrastive_combined(
                h_s,
                lab_s,
                h_t,
                pseudo,
                state.bank_head,
                tau=cfg.tau,
                include_positive=cfg.include_positive,
                normalize=cfg.normalize_features,
            )
            acc = pseudo_label_accuracy(pseudo, diag_t)
            pseudo_acc = acc.accuracy
            labeled_frac = acc.assigned / pseudo.size
        total, parts = total_objective(ce, ent, contra, cfg.lambda_ent, cfg.lambda_contra)
        if not np.isfinite(parts.total):
            raise DivergenceError(
                f"total loss is not finite at iteration {iteration}: "
                f"ce={parts.ce} entropy={parts.entropy} contra={parts.contra}"
            )
        backward(total, g)
    for p in params:
        if p.grad is not None:
            p.data -= cfg.learning_rate * p.grad
    zero_grads(params)
    return MetricsRecord(
        iteration, parts.ce, parts.entropy, parts.contra, parts.total, pseudo_acc, labeled_frac
    )


def train(config: RunConfig, data: Dataset) -> tuple[TrainState, list[MetricsRecord]]:
    """Run the full loop; returns the final state and one record per iteration.

    Deterministic given the config: identical config and data give
    byte-identical metrics. Raises DivergenceError when the total loss
    leaves the finite range.
    """
    config.validate()
    state = init_state(config, data.spec.classes, data.spec.channels)
    if config.style_transfer:
        state.style = _build_style(config, data)
    if config.contrastive and config.bank_warm_start:
        warm_start_banks(state, data)
    params = state.parameters()
    rng_batch = np.random.default_rng([config.seed, 1])
    n_s = len(data.source_train.images)
    n_t = len(data.target_train.images)
    records: list[MetricsRecord] = []
    for it in range(config.iterations):
        si = rng_batch.integers(0, n_s, size=config.batch_source)
        ti = rng_batch.integers(0, n_t, size=config.batch_target)
        img_s = data.source_train.images[si]
        lab_s = data.source_train.labels[si].reshape(-1)
        img_t = data.target_train.images[ti]
        # held-out truth: used for the pseudo_acc diagnostic only, never in a loss
        diag_t = data.target_train.labels[ti].reshape(-1)
        if state.style is not None:
            if state.style.direction == "source_to_target":
                img_s = state.style.apply(img_s)
            else:
                img_t = state.style.apply(img_t)
        records.append(_step(state, params, img_s, lab_s, img_t, diag_t, it))
    return state, records
