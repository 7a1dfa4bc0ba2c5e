"""Identity and part-segmentation losses with gradients w.r.t. logits.

All reductions accumulate in float64 regardless of input precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import LabelMap


@dataclass(frozen=True)
class LossReport:
    total: float
    id_source: float
    ps_source: float
    ps_target: float
    lambda1: float = 1.0
    lambda2: float = 1.0

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "id_source": self.id_source,
            "ps_source": self.ps_source,
            "ps_target": self.ps_target,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
        }


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def softmax_xent(logits: Sequence[float], label: int) -> tuple[float, np.ndarray]:
    """Cross-entropy of one sample; returns (loss, d loss / d logits)."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("logits must be a non-empty vector")
    if not 0 <= label < z.size:
        raise ValueError(f"label {label} out of range for {z.size} classes")
    logp = log_softmax(z)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def pcb_id_loss(part_losses: Sequence[float]) -> float:
    return float(np.sum(np.asarray(part_losses, dtype=np.float64)))


def visibility_id_loss(part_losses: Sequence[float], visible: Sequence[bool]) -> float:
    """Sum of part losses over visible parts only."""
    losses = np.asarray(part_losses, dtype=np.float64)
    mask = np.asarray(visible, dtype=bool)
    if mask.shape != losses.shape:
        raise ValueError("one visibility flag per part loss is required")
    return float(np.sum(np.where(mask, losses, 0.0)))


def _check_seg_shapes(logits: np.ndarray, labels: LabelMap) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"segmentation logits must be K x H x W, got shape {z.shape}")
    if z.shape[1:] != labels.shape:
        raise ValueError(f"logits spatial shape {z.shape[1:]} != label map shape {labels.shape}")
    if z.shape[0] != labels.num_classes:
        raise ValueError(f"logits have {z.shape[0]} classes, label map declares {labels.num_classes}")
    return z


def _pixel_xent(z: np.ndarray, lab: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel loss (H x W) and softmax - onehot (K x H x W)."""
    logp = log_softmax(z, axis=0)
    rows, cols = np.indices(lab.shape)
    loss = -logp[lab, rows, cols]
    grad = np.exp(logp)
    grad[lab, rows, cols] -= 1.0
    return loss, grad


def ps_loss_balanced(logits: np.ndarray, labels: LabelMap) -> tuple[float, np.ndarray]:
    """Class-size-normalized segmentation loss.

    Each class present in ``labels`` contributes the mean loss over its own
    pixels; those means are averaged over the classes present. Classes with
    no pixels are skipped.
    """
    z = _check_seg_shapes(logits, labels)
    lab = labels.labels.astype(np.intp)
    loss_px, grad = _pixel_xent(z, lab)
    counts = np.bincount(lab.ravel(), minlength=z.shape[0])
    present = np.flatnonzero(counts)
    sums = np.bincount(lab.ravel(), weights=loss_px.ravel(), minlength=z.shape[0])
    loss = float(np.mean(sums[present] / counts[present]))
    weight = 1.0 / (present.size * counts[lab])
    return loss, grad * weight[None, :, :]


def ps_loss_simple(logits: np.ndarray, labels: LabelMap) -> tuple[float, np.ndarray]:
    """Plain mean of per-pixel cross-entropy."""
    z = _check_seg_shapes(logits, labels)
    lab = labels.labels.astype(np.intp)
    loss_px, grad = _pixel_xent(z, lab)
    n = lab.size
    return float(loss_px.sum() / n), grad / n


def total_loss(
    id_source: float,
    ps_source: float,
    ps_target: float,
    lambda1: float = 1.0,
    lambda2: float = 1.0,
) -> LossReport:
    total = float(id_source) + lambda1 * float(ps_source) + lambda2 * float(ps_target)
    return LossReport(total, float(id_source), float(ps_source), float(ps_target), lambda1, lambda2)
