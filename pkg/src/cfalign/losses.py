"""Training objectives: supervised CE, entropy minimization, and class-wise InfoNCE.

All losses return scalar tensors on the active graph. Class centers enter as
plain numpy constants so no gradient ever flows into the memory bank, and
pixels labeled ``-1`` are excluded everywhere. InfoNCE is computed through a
max-shifted log-sum-exp, so temperatures as small as 1e-2 stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError
from .membank import MemoryBank
from .tensor import (
    Tensor,
    add,
    div,
    exp,
    log,
    matmul,
    mul,
    pick,
    reduce_mean,
    reduce_sum,
    scale,
    sqrt,
    sub,
    take_rows,
)

__all__ = [
    "LossBreakdown",
    "cross_entropy",
    "entropy_loss",
    "info_nce",
    "contrastive_combined",
    "total_objective",
]


def cross_entropy(pred: Tensor, labels: np.ndarray) -> Tensor:
    """Mean of -log pred[i, labels[i]] over rows with labels >= 0.

    `pred` rows are caller-guaranteed probability vectors; the log is clamped
    so a zero probability yields a large finite loss instead of inf.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if pred.data.ndim != 2 or labels.shape != (pred.data.shape[0],):
        raise DimensionError(
            f"cross_entropy needs (n,c) predictions and (n,) labels, got {pred.data.shape} and {labels.shape}"
        )
    labeled = np.flatnonzero(labels >= 0)
    if labeled.size == 0:
        raise ContractError("cross_entropy needs at least one labeled pixel")
    if labels.max() >= pred.data.shape[1]:
        raise ContractError(f"label {labels.max()} out of range for {pred.data.shape[1]} classes")
    p = pick(take_rows(pred, labeled), labels[labeled])
    return scale(reduce_mean(log(p)), -1.0)


def entropy_loss(pred: Tensor) -> Tensor:
    """Shannon entropy of each row, normalized by log(class count), averaged.

    Lies in [0, 1] for probability rows: 1 at the uniform distribution, 0 at
    a one-hot row (the 0 * log 0 limit is taken as 0 via the log clamp).
    """
    if pred.data.ndim != 2:
        raise DimensionError(f"entropy_loss needs an (n,c) tensor, got shape {pred.data.shape}")
    c = pred.data.shape[1]
    if c < 2:
        raise ContractError(f"entropy needs at least 2 classes, got {c}")
    plogp = reduce_sum(mul(pred, log(pred)), axis=1)
    return reduce_mean(scale(plogp, -1.0 / np.log(c)))


def _l2_rows(x: Tensor) -> Tensor:
    norms = sqrt(reduce_sum(mul(x, x), axis=1, keepdims=True))
    return div(x, norms)


def info_nce(
    features: Tensor,
    labels: np.ndarray,
    centers: np.ndarray,
    center_mask: np.ndarray | None = None,
    tau: float = 0.07,
    include_positive: bool = True,
    normalize: bool = False,
) -> tuple[Tensor, int]:
    """Center-based InfoNCE: pull each labeled feature toward its class center.

    Per labeled row i with label y: -log softmax over masked-in centers of
    inner-product similarities divided by `tau`, evaluated at y. The positive
    center appears in the denominator by default; ``include_positive=False``
    restricts the denominator to the other centers, which needs at least two
    masked-in centers and can push the loss below zero.

    Returns (mean loss over labeled rows, labeled row count); with no labeled
    row the loss is a constant 0 and the count is the flag.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    labels = np.asarray(labels, dtype=np.int64)
    centers = np.asarray(centers, dtype=np.float64)
    if features.data.ndim != 2 or centers.ndim != 2 or features.data.shape[1] != centers.shape[1]:
        raise DimensionError(
            f"info_nce needs (n,d) features and (c,d) centers, got {features.data.shape} and {centers.shape}"
        )
    if labels.shape != (features.data.shape[0],):
        raise DimensionError(f"labels must be ({features.data.shape[0]},), got {labels.shape}")
    if center_mask is None:
        center_mask = np.ones(centers.shape[0], dtype=bool)
    center_mask = np.asarray(center_mask, dtype=bool)
    if center_mask.shape != (centers.shape[0],):
        raise DimensionError(
            f"center mask must be ({centers.shape[0]},), got {center_mask.shape}"
        )

    labeled = np.flatnonzero(labels >= 0)
    if labeled.size == 0:
        return Tensor(0.0), 0
    if labels.max() >= centers.shape[0]:
        raise ContractError(f"label {labels.max()} out of range for {centers.shape[0]} centers")
    if not center_mask[labels[labeled]].all():
        raise ContractError("a label points at a masked-out center")
    active = np.flatnonzero(center_mask)
    if not include_positive and active.size < 2:
        raise ContractError("excluding the positive needs at least 2 masked-in centers")

    f = take_rows(features, labeled)
    sub_centers = centers[active]
    if normalize:
        f = _l2_rows(f)
        norms = np.linalg.norm(sub_centers, axis=1, keepdims=True)
        sub_centers = sub_centers / np.maximum(norms, 1e-12)
    # positions of each label inside the masked-in subset
    pos_of = np.full(centers.shape[0], -1, dtype=np.int64)
    pos_of[active] = np.arange(active.size)
    pos = pos_of[labels[labeled]]

    logits = scale(matmul(f, sub_centers.T), 1.0 / tau)
    if include_positive:
        shift = logits.data.max(axis=1, keepdims=True)  # constant shift: exact for lse
        e = exp(sub(logits, shift))
        z = reduce_sum(e, axis=1)  # >= 1 because the max term contributes exp(0)
    else:
        keep = np.ones((labeled.size, active.size))
        keep[np.arange(labeled.size), pos] = 0.0
        # shift by the largest KEPT logit, not the global max: if the positive
        # dominates, the exclusive sum would underflow past the log guard
        shift = np.where(keep > 0, logits.data, -np.inf).max(axis=1, keepdims=True)
        # push dropped entries far negative before exp so they cannot overflow;
        # the keep mask then zeroes any rounding residue
        cushion = (1.0 - keep) * (np.maximum(logits.data - shift, 0.0) + 1000.0)
        e = exp(sub(sub(logits, shift), cushion))
        z = reduce_sum(mul(e, keep), axis=1)  # >= 1: the kept max contributes exp(0)
    lse = add(log(z), shift.ravel())
    loss = reduce_mean(sub(lse, pick(logits, pos)))
    return loss, int(labeled.size)


def contrastive_combined(
    f_source: Tensor,
    y_source: np.ndarray,
    f_target: Tensor,
    y_target: np.ndarray,
    bank: MemoryBank,
    tau: float = 0.07,
    include_positive: bool = True,
    normalize: bool = False,
) -> Tensor:
    """Sum of the four cross-domain InfoNCE terms.

    Both feature sets are pulled toward both domains' center tables. For each
    term, features whose class row is uninitialized on that side are dropped,
    and a term with no surviving feature (or no initialized center) adds 0.
    """
    terms = (
        (f_source, y_source, bank.v_source, bank.init_source),
        (f_source, y_source, bank.v_target, bank.init_target),
        (f_target, y_target, bank.v_source, bank.init_source),
        (f_target, y_target, bank.v_target, bank.init_target),
    )
    total: Tensor | None = None
    for f, y, centers, mask in terms:
        needed = 2 if not include_positive else 1
        if int(mask.sum()) < needed:
            continue
        y = np.asarray(y, dtype=np.int64)
        keep = y >= 0
        keep[keep] = mask[y[keep]]
        term, count = info_nce(
            f,
            np.where(keep, y, -1),
            centers,
            mask,
            tau=tau,
            include_positive=include_positive,
            normalize=normalize,
        )
        if count:
            total = term if total is None else add(total, term)
    return total if total is not None else Tensor(0.0)


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of the objective's parts for one iteration."""

    ce: float
    entropy: float
    contra: float
    total: float
    lambda_ent: float
    lambda_contra: float


def total_objective(
    ce, entropy, contra, lambda_ent: float, lambda_contra: float
) -> tuple[Tensor | float, LossBreakdown]:
    """Weighted total ``ce + lambda_ent * entropy + lambda_contra * contra``.

    Tensor inputs keep their graph connection, so the returned total can be
    the backward root; plain floats are combined arithmetically.
    """
    if lambda_ent < 0 or lambda_contra < 0:
        raise ContractError(
            f"loss weights must be nonnegative, got {lambda_ent} and {lambda_contra}"
        )

    def value(x) -> float:
        return x.item() if isinstance(x, Tensor) else float(x)

    if any(isinstance(x, Tensor) for x in (ce, entropy, contra)):
        wrap = lambda x: x if isinstance(x, Tensor) else Tensor(float(x))
        total = add(wrap(ce), add(scale(wrap(entropy), lambda_ent), scale(wrap(contra), lambda_contra)))
        total_value = total.item()
    else:
        total = float(ce) + lambda_ent * float(entropy) + lambda_contra * float(contra)
        total_value = total
    parts = LossBreakdown(
        ce=value(ce),
        entropy=value(entropy),
        contra=value(contra),
        total=total_value,
        lambda_ent=lambda_ent,
        lambda_contra=lambda_contra,
    )
    return total, parts
