"""Evaluation: per-class intersection-over-union, mIOU, and pseudo-label accuracy.

IOU for class c is TP/(TP+FP+FN) over all evaluated pixels; classes whose
union is empty (never predicted, never true) are reported as None and left
out of the mean. Pseudo-label accuracy reuses the training-time assignment
rule against the held-out truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adain import to_pixels
from .data import Split
from .errors import ContractError
from .kernels import confusion
from .membank import assign_pseudo_labels, pseudo_label_accuracy
from .model import model_features, predict_labels
from .tensor import Tensor
from .train import TrainState

__all__ = ["EvalRecord", "iou_from_confusion", "evaluate", "eval_to_json", "save_eval_json"]


@dataclass
class EvalRecord:
    """Final quality numbers for one checkpoint on one labeled split."""

    per_class_iou: list  # float per class, None where the union is empty
    miou: float
    pseudo_acc: float
    pseudo_assigned: int
    pixel_count: int


def iou_from_confusion(matrix: np.ndarray) -> tuple[list, float]:
    """Per-class IOU and their mean from a (truth, prediction) count matrix."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractError(f"confusion matrix must be square, got shape {matrix.shape}")
    tp = np.diag(matrix).astype(np.float64)
    fn = matrix.sum(axis=1) - tp
    fp = matrix.sum(axis=0) - tp
    union = tp + fp + fn
    per_class = [float(tp[c] / union[c]) if union[c] > 0 else None for c in range(len(tp))]
    present = [v for v in per_class if v is not None]
    if not present:
        raise ContractError("every class has an empty union; nothing to average")
    return per_class, float(np.mean(present))


def evaluate(state: TrainState, split: Split) -> EvalRecord:
    """Score a trained state on a labeled split.

    Evaluation images are never style-transferred: the point is performance
    on the raw target domain.
    """
    labels = split.labels.reshape(-1)
    if labels.size == 0:
        raise ContractError("evaluation split is empty")
    if labels.max() >= state.classes or labels.min() < 0:
        raise ContractError(
            f"split labels use classes outside [0, {state.classes}); "
            f"found range [{labels.min()}, {labels.max()}]"
        )
    preds = predict_labels(state.model, split.images).reshape(-1)
    per_class, miou = iou_from_confusion(confusion(labels, preds, state.classes))

    pseudo_acc, assigned = 0.0, 0
    if int(state.bank_feat.init_source.sum()) >= 2:
        feats = model_features(state.model, Tensor(to_pixels(split.images)))
        pseudo = assign_pseudo_labels(feats.data, state.bank_feat, state.config.threshold)
        pseudo_acc, assigned = pseudo_label_accuracy(pseudo, labels)
    return EvalRecord(
        per_class_iou=per_class,
        miou=miou,
        pseudo_acc=pseudo_acc,
        pseudo_assigned=assigned,
        pixel_count=int(labels.size),
    )


def eval_to_json(record: EvalRecord, config) -> str:
    """Render the final-results document; key order is fixed for determinism."""
    payload = {
        "per_class_iou": record.per_class_iou,
        "miou": record.miou,
        "pseudo_acc": record.pseudo_acc,
        "pseudo_assigned": record.pseudo_assigned,
        "pixel_count": record.pixel_count,
        "config": config.to_dict(),
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def save_eval_json(record: EvalRecord, config, path: str | Path) -> None:
    Path(path).write_text(eval_to_json(record, config))
