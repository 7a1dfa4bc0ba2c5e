"""Manifest-driven glue: resolve files, pool, embed."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, TypeVar

from .data_model import (
    DataError,
    KeypointSet,
    ManifestEntry,
    load_keypoints,
    load_manifest,
    load_tensor,
)
from .heads import HeadStack, embed
from .pooling import PartFeatureSet, global_pool, pap_pool, pcb_pool
from .regions import RegionConfig, pap_regions
from .retrieval import EmbeddingSet

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class PoolMode:
    kind: str  # "pap", "pap6", "pcb" or "global"
    parts: int

    @classmethod
    def parse(cls, text: str) -> PoolMode:
        text = text.strip().lower()
        if text == "pap":
            return cls("pap", 9)
        if text == "pap6":
            return cls("pap6", 6)
        if text == "global":
            return cls("global", 1)
        if text.startswith("pcb"):
            _, _, num = text.partition(":")
            try:
                P = int(num) if num else 6
            except ValueError:
                raise ValueError(f"bad pcb part count in mode {text!r}") from None
            if P < 1:
                raise ValueError("pcb part count must be positive")
            return cls("pcb", P)
        raise ValueError(f"unknown pooling mode {text!r} (pap, pap6, pcb:P, global)")

    @property
    def needs_keypoints(self) -> bool:
        return self.kind in ("pap", "pap6")

    def __str__(self) -> str:
        return f"pcb:{self.parts}" if self.kind == "pcb" else self.kind


class Dataset:
    """A manifest plus lazily loaded, cached keypoint files; paths resolve against the manifest directory."""

    def __init__(self, manifest_path: str | Path):
        self.path = Path(manifest_path)
        self.root = self.path.parent
        try:
            text = self.path.read_text()
        except OSError as exc:
            raise DataError(f"cannot read manifest {self.path}: {exc.strerror}") from None
        self.entries: list[ManifestEntry] = load_manifest(text)
        self._keypoints: dict[str, dict[str, KeypointSet]] = {}

    def resolve(self, ref: str) -> Path:
        p = Path(ref)
        return p if p.is_absolute() else self.root / p

    def keypoints(self, entry: ManifestEntry) -> KeypointSet:
        if not entry.keypoint_ref:
            raise DataError(f"{entry.image_id}: no keypoint file in manifest")
        path = self.resolve(entry.keypoint_ref)
        key = str(path)
        if key not in self._keypoints:
            try:
                self._keypoints[key] = load_keypoints(path.read_text())
            except OSError as exc:
                raise DataError(f"cannot read keypoints {path}: {exc.strerror}") from None
        try:
            return self._keypoints[key][entry.image_id]
        except KeyError:
            raise DataError(f"{entry.image_id}: missing from keypoint file {path}") from None

    def preload_keypoints(self) -> None:
        for e in self.entries:
            if e.keypoint_ref:
                self.keypoints(e)

    def pool(self, entry: ManifestEntry, mode: PoolMode, cfg: RegionConfig) -> PartFeatureSet:
        if not entry.feature_path:
            raise DataError(f"{entry.image_id}: no feature map in manifest")
        try:
            fmap = load_tensor(self.resolve(entry.feature_path))
        except OSError as exc:
            raise DataError(f"cannot read feature map {entry.feature_path}: {exc.strerror}") from None
        if mode.kind == "global":
            return global_pool(fmap)
        if mode.kind == "pcb":
            return pcb_pool(fmap, mode.parts)
        bands = pap_regions(self.keypoints(entry), fmap.height, cfg)
        if mode.kind == "pap6":
            bands = bands[:6]
        return pap_pool(fmap, bands)


def parallel_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    """Order-preserving map; results never depend on ``threads``."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def pool_dataset(ds: Dataset, mode: PoolMode, cfg: RegionConfig, threads: int = 1) -> list[PartFeatureSet]:
    if mode.needs_keypoints:
        ds.preload_keypoints()
    return parallel_map(lambda e: ds.pool(e, mode, cfg), ds.entries, threads)


def identity_embedding(feats: PartFeatureSet, entry: ManifestEntry) -> EmbeddingSet:
    return EmbeddingSet(feats.parts, feats.visible, entry.person_id, entry.camera_id)


def embed_dataset(
    ds: Dataset,
    feats: Sequence[PartFeatureSet],
    heads: HeadStack | None,
    threads: int = 1,
) -> list[EmbeddingSet]:
    """Embed pooled features with ``heads``; without heads the pooled vectors are used as is."""
    pairs = list(zip(feats, ds.entries))
    if heads is None:
        return [identity_embedding(f, e) for f, e in pairs]
    return parallel_map(lambda fe: embed(heads, fe[0], fe[1].person_id, fe[1].camera_id), pairs, threads)
