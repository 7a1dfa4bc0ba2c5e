"""Synthetic datasets with planted identity structure, for desk-scale runs of the pipeline."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data_model import (
    KeypointSet,
    LabelMap,
    ManifestEntry,
    Tensor3,
    dump_keypoints,
    dump_manifest,
    encode_array,
    write_tensor,
)
from .heads import HeadStack, save_checkpoint
from .regions import NUM_PAP_PARTS, pcb_stripes

# Canonical upright skeleton, y as a fraction of image height.
_CANONICAL_Y = {
    "face": 0.05,
    "shoulder": 0.15,
    "elbow": 0.32,
    "wrist": 0.48,
    "hip": 0.5,
    "knee": 0.75,
    "ankle": 0.95,
}
_KP_ROLE = (
    "face", "face", "face", "face", "face",
    "shoulder", "shoulder", "elbow", "elbow", "wrist", "wrist",
    "hip", "hip", "knee", "knee", "ankle", "ankle",
)  # fmt: skip
_KP_SIDE = (0, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1, -1, 1)


@dataclass
class SynthSpec:
    num_ids: int = 50
    images_per_id: int = 4
    channels: int = 16
    height: int = 24
    width: int = 8
    image_h: int = 384
    image_w: int = 128
    noise: float = 0.1
    jitter: float = 20.0  # keypoint y jitter in pixels, scaled by noise
    occlusion: float = 0.1
    target_ids: int = 10
    embed_dim: int = 256

    @classmethod
    def from_mapping(cls, cfg) -> SynthSpec:
        kwargs = {}
        for f in fields(cls):
            if f.name in cfg and cfg[f.name] is not None:
                kwargs[f.name] = type(f.default)(cfg[f.name])
        return cls(**kwargs)


def canonical_keypoints(image_h: float = 384, image_w: float = 128, conf: float = 1.0) -> KeypointSet:
    pts = np.zeros((17, 3))
    for i, (role, side) in enumerate(zip(_KP_ROLE, _KP_SIDE)):
        pts[i] = (image_w / 2 + side * 0.15 * image_w, _CANONICAL_Y[role] * image_h, conf)
    return KeypointSet(pts, float(image_h), float(image_w))


def stripe_aligned_keypoints(H: int, image_h: float | None = None, image_w: float = 128) -> KeypointSet:
    """Keypoints whose R1-R6 bands coincide with six even stripes of H rows.

    Use together with ``RegionConfig(foot_ratio=inf)`` so the foot band runs
    to the image bottom. Needs H >= 6.
    """
    if H < 6:
        raise ValueError("need at least 6 rows")
    image_h = float(image_h if image_h is not None else 16 * H)
    scale = image_h / H
    b = [s.row_start for s in pcb_stripes(6, H)]
    # shoulders and hips sit inside rows b1 and b3, offset so their midpoint lands in row b2
    offset = min(max((2 * b[2] + 1 - b[1] - b[3]) / 2.0, 0.0), 0.99)
    y = {
        "face": 0.0,
        "shoulder": (b[1] + offset) * scale,
        "hip": (b[3] + offset) * scale,
        "knee": b[4] * scale,
        "ankle": b[5] * scale,
        "elbow": (b[2]) * scale,
        "wrist": (b[3]) * scale,
    }
    pts = np.array([(image_w / 2 + side * 0.15 * image_w, y[role], 1.0) for role, side in zip(_KP_ROLE, _KP_SIDE)])
    return KeypointSet(pts, image_h, float(image_w))


def _labelmap15(kps: KeypointSet, rows: int, cols: int) -> LabelMap:
    """Densepose-style 15-class map drawn from skeleton bands."""
    y = kps.y / kps.image_h * rows
    sho, elb, wri = y[5:7].mean(), y[7:9].mean(), y[9:11].mean()
    hip, knee, ank = y[11:13].mean(), y[13:15].mean(), y[15:17].mean()
    lab = np.zeros((rows, cols), dtype=np.uint8)
    r = np.arange(rows)[:, None] + 0.5
    c = np.arange(cols)[None, :] + 0.5
    left = c < cols / 2
    body = (c > cols * 0.2) & (c < cols * 0.8)
    arm = ((c > cols * 0.1) & (c <= cols * 0.2)) | ((c >= cols * 0.8) & (c < cols * 0.9))
    arm_left = c <= cols * 0.2
    head = (r < sho) & (c > cols * 0.35) & (c < cols * 0.65)
    lab[np.broadcast_to(head, lab.shape)] = 14
    torso = (r >= sho) & (r < hip) & body
    lab[np.broadcast_to(torso, lab.shape)] = 1
    for lo, hi, lcls, rcls in ((sho, elb, 10, 11), (elb, wri, 12, 13), (wri, wri + (wri - elb) * 0.3, 3, 2)):
        band = (r >= lo) & (r < hi) & arm
        lab[np.broadcast_to(band & arm_left, lab.shape)] = lcls
        lab[np.broadcast_to(band & ~arm_left, lab.shape)] = rcls
    for lo, hi, lcls, rcls in ((hip, knee, 7, 6), (knee, ank, 9, 8), (ank, ank + (ank - knee) * 0.3, 4, 5)):
        band = (r >= lo) & (r < hi) & body
        lab[np.broadcast_to(band & left, lab.shape)] = lcls
        lab[np.broadcast_to(band & ~left, lab.shape)] = rcls
    return LabelMap(lab, 15)


def _image_keypoints(spec: SynthSpec, rng: np.random.Generator) -> KeypointSet:
    base = canonical_keypoints(spec.image_h, spec.image_w)
    pts = base.points.copy()
    pts[:, 1] += spec.noise * spec.jitter * rng.standard_normal(17)
    pts[:, 1] = np.clip(pts[:, 1], 0, spec.image_h)
    if rng.random() < spec.occlusion:
        pts[15:17, 2] = 0.0
    return KeypointSet(pts, float(spec.image_h), float(spec.image_w))


def _prototype(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Identity signature: a lognormal level per (channel, row block) with mild pixel texture."""
    blocks = max(1, min(6, spec.height))
    levels = rng.lognormal(0.0, 0.6, (spec.channels, blocks))
    rows = np.arange(spec.height) * blocks // spec.height
    texture = rng.uniform(0.8, 1.0, (spec.channels, spec.height, spec.width))
    return (levels[:, rows, None] * texture).astype(np.float32)


def _image_features(proto: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> Tensor3:
    return Tensor3(proto + spec.noise * rng.standard_normal(proto.shape).astype(np.float32))


def generate(spec: SynthSpec, seed: int, out_dir: str | Path) -> dict:
    """Write a synthetic dataset under ``out_dir``; returns a summary dict.

    Layout: features/*.etns, labels/*.etns (15-class), keypoints.jsonl,
    query.csv, gallery.csv, target.csv, target_truth.json, heads/.
    Identity k has person_id k + 1; image j of an identity is shot by camera
    j + 1, the first image is the query and the rest form the gallery.
    """
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    keypoints: dict[str, KeypointSet] = {}
    query, gallery, target = [], [], []
    truth: dict[str, int] = {}

    def emit(image_id: str, proto: np.ndarray) -> tuple[str, str]:
        fmap = _image_features(proto, spec, rng)
        kps = _image_keypoints(spec, rng)
        keypoints[image_id] = kps
        feat_rel = f"features/{image_id}.etns"
        lab_rel = f"labels/{image_id}.etns"
        (out / feat_rel).write_bytes(write_tensor(fmap))
        (out / lab_rel).write_bytes(encode_array(_labelmap15(kps, 2 * spec.height, 2 * spec.width).labels))
        return feat_rel, lab_rel

    for k in range(spec.num_ids):
        proto = _prototype(spec, rng)
        for j in range(spec.images_per_id):
            image_id = f"id{k + 1:04d}_c{j + 1}_{j:02d}"
            feat, lab = emit(image_id, proto)
            entry = ManifestEntry(
                image_id, k + 1, j + 1, "query" if j == 0 else "gallery", feat, "keypoints.jsonl", lab
            )
            (query if j == 0 else gallery).append(entry)
    for k in range(spec.target_ids):
        proto = _prototype(spec, rng)
        for j in range(spec.images_per_id):
            image_id = f"tgt{k:04d}_{j:02d}"
            feat, lab = emit(image_id, proto)
            target.append(ManifestEntry(image_id, camera_id=j + 1, feature_path=feat,
                                        keypoint_ref="keypoints.jsonl", labelmap_path=lab))
            truth[image_id] = k

    (out / "keypoints.jsonl").write_text(dump_keypoints(keypoints))
    (out / "query.csv").write_text(dump_manifest(query))
    (out / "gallery.csv").write_text(dump_manifest(gallery))
    (out / "target.csv").write_text(dump_manifest(target))
    (out / "target_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    heads = HeadStack.init(NUM_PAP_PARTS, spec.channels, spec.num_ids, spec.embed_dim, seed=seed)
    save_checkpoint(heads, out / "heads")
    summary = {
        "spec": asdict(spec),
        "seed": seed,
        "num_query": len(query),
        "num_gallery": len(gallery),
        "num_target": len(target),
    }
    (out / "synth.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
