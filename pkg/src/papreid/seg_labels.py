"""Densepose part-label fusion (14 parts + background -> 8 classes) and segmentation metrics."""
from __future__ import annotations

import numpy as np

from .data_model import LabelMap

DENSEPOSE_CLASSES = (
    "background",
    "torso",
    "right_hand",
    "left_hand",
    "left_foot",
    "right_foot",
    "right_upper_leg",
    "left_upper_leg",
    "right_lower_leg",
    "left_lower_leg",
    "left_upper_arm",
    "right_upper_arm",
    "left_lower_arm",
    "right_lower_arm",
    "head",
)

FUSED_CLASSES = (
    "background",
    "torso",
    "upper_arm",
    "lower_arm",
    "upper_leg",
    "lower_leg",
    "foot",
    "head",
)

_FUSION = {
    "background": "background",
    "torso": "torso",
    "right_hand": "lower_arm",
    "left_hand": "lower_arm",
    "left_foot": "foot",
    "right_foot": "foot",
    "right_upper_leg": "upper_leg",
    "left_upper_leg": "upper_leg",
    "right_lower_leg": "lower_leg",
    "left_lower_leg": "lower_leg",
    "left_upper_arm": "upper_arm",
    "right_upper_arm": "upper_arm",
    "left_lower_arm": "lower_arm",
    "right_lower_arm": "lower_arm",
    "head": "head",
}

FUSION_TABLE = np.array([FUSED_CLASSES.index(_FUSION[name]) for name in DENSEPOSE_CLASSES], dtype=np.uint8)

# One 15-class representative per fused class (first source class in table order).
FUSED_TO_DENSEPOSE = np.array(
    [int(np.flatnonzero(FUSION_TABLE == k)[0]) for k in range(len(FUSED_CLASSES))], dtype=np.uint8
)


def fusion_table() -> list[tuple[int, str, int, str]]:
    return [
        (i, name, int(FUSION_TABLE[i]), FUSED_CLASSES[FUSION_TABLE[i]])
        for i, name in enumerate(DENSEPOSE_CLASSES)
    ]


def fuse_densepose(map15: LabelMap) -> LabelMap:
    if map15.num_classes != len(DENSEPOSE_CLASSES):
        raise ValueError(f"expected a {len(DENSEPOSE_CLASSES)}-class label map, got {map15.num_classes}")
    return LabelMap(FUSION_TABLE[map15.labels], len(FUSED_CLASSES))


def embed_fused(map8: LabelMap) -> LabelMap:
    """Express a fused map in the 15-class space using one representative per class."""
    if map8.num_classes != len(FUSED_CLASSES):
        raise ValueError(f"expected a {len(FUSED_CLASSES)}-class label map, got {map8.num_classes}")
    return LabelMap(FUSED_TO_DENSEPOSE[map8.labels], len(DENSEPOSE_CLASSES))


def _labels(x) -> np.ndarray:
    return x.labels if isinstance(x, LabelMap) else np.asarray(x)


def pixel_accuracy(pred, truth) -> float:
    p, t = _labels(pred), _labels(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return float(np.mean(p == t))


def miou(pred, truth, num_classes: int) -> float:
    """Mean IoU over classes whose union is non-empty."""
    p, t = _labels(pred).astype(np.int64), _labels(truth).astype(np.int64)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if p.size and (max(p.max(), t.max()) >= num_classes or min(p.min(), t.min()) < 0):
        raise ValueError(f"label out of range [0, {num_classes})")
    inter = np.bincount(p[p == t], minlength=num_classes)
    area_p = np.bincount(p.ravel(), minlength=num_classes)
    area_t = np.bincount(t.ravel(), minlength=num_classes)
    union = area_p + area_t - inter
    valid = union > 0
    return float(np.mean(inter[valid] / union[valid]))
