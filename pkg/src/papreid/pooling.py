"""Max pooling of part features from a feature map under region bands."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import Tensor3
from .regions import RegionBand, pcb_stripes


@dataclass(frozen=True, eq=False)
class PartFeatureSet:
    """P pooled vectors (rows of ``parts``) with per-part visibility.

    Invisible parts are the all-zero vector. Storage is float32 unless
    float64 is passed in (used for finite-difference checks).
    """

    parts: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        parts = np.asarray(self.parts)
        if parts.dtype != np.float64:
            parts = parts.astype(np.float32)
        visible = np.asarray(self.visible, dtype=bool)
        if parts.ndim != 2:
            raise ValueError(f"parts must be P x C, got shape {parts.shape}")
        if visible.shape != (parts.shape[0],):
            raise ValueError("visibility length must equal the part count")
        if not np.all(np.isfinite(parts)):
            raise ValueError("part features contain NaN or Inf")
        if np.any(parts[~visible] != 0):
            raise ValueError("invisible parts must be zero vectors")
        parts = np.array(parts, order="C", copy=True)
        visible = visible.copy()
        parts.setflags(write=False)
        visible.setflags(write=False)
        object.__setattr__(self, "parts", parts)
        object.__setattr__(self, "visible", visible)

    @property
    def num_parts(self) -> int:
        return self.parts.shape[0]

    @property
    def dim(self) -> int:
        return self.parts.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PartFeatureSet):
            return NotImplemented
        return np.array_equal(self.parts, other.parts) and np.array_equal(self.visible, other.visible)


def pap_pool(fmap: Tensor3, bands: Sequence[RegionBand]) -> PartFeatureSet:
    """Max over rows [row_start, row_end) and all columns, per visible band."""
    values = fmap.values
    C, H, _ = values.shape
    parts = np.zeros((len(bands), C), dtype=np.float32)
    visible = np.zeros(len(bands), dtype=bool)
    for p, band in enumerate(bands):
        if not band.visible:
            continue
        if band.row_end > H or band.row_start < 0:
            raise ValueError(f"band {p} rows [{band.row_start}, {band.row_end}) outside feature map height {H}")
        parts[p] = values[:, band.row_start : band.row_end, :].max(axis=(1, 2))
        visible[p] = True
    return PartFeatureSet(parts, visible)


def pcb_pool(fmap: Tensor3, P: int) -> PartFeatureSet:
    return pap_pool(fmap, pcb_stripes(P, fmap.height))


def global_pool(fmap: Tensor3) -> PartFeatureSet:
    return PartFeatureSet(fmap.values.max(axis=(1, 2))[None, :], np.ones(1, dtype=bool))


def pool_batch(
    fmaps: Sequence[Tensor3],
    bands: Sequence[Sequence[RegionBand]],
    threads: int = 1,
) -> list[PartFeatureSet]:
    """Pool many images; results come back in input order whatever ``threads`` is."""
    if len(fmaps) != len(bands):
        raise ValueError("need one band list per feature map")
    if threads <= 1:
        return [pap_pool(f, b) for f, b in zip(fmaps, bands)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(pap_pool, fmaps, bands))
