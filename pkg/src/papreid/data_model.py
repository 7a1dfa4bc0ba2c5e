"""Value types and on-disk formats: feature maps, keypoints, label maps, manifests.

Tensors and label maps share one little-endian container ("ETNS"):

    magic  b"ETNS"            4 bytes
    version u8 (= 1)          1 byte
    dtype   u8 (1=f32, 2=u8)  1 byte
    ndim    u8 (2 or 3)       1 byte
    dims    ndim x u32 LE
    payload row-major, no padding
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"ETNS"
VERSION = 1
DTYPE_F32 = 1
DTYPE_U8 = 2
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_U8: np.dtype("u1")}

UNLABELED = -1
SPLITS = ("train", "query", "gallery")
MANIFEST_HEADER = ["image_id", "person_id", "camera_id", "split", "feature", "keypoints", "labelmap"]

NUM_KEYPOINTS = 17
COCO_KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)


class DataError(ValueError):
    """Base class for every invariant or format violation."""


class FormatError(DataError):
    pass


class BadMagicError(FormatError):
    pass


class UnsupportedFormatError(FormatError):
    pass


class LengthMismatchError(FormatError):
    pass


class NonFiniteError(DataError):
    pass


class ShapeError(DataError):
    pass


class ManifestError(DataError):
    pass


class KeypointError(DataError):
    pass


class DuplicateIdError(DataError):
    pass


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Tensor3:
    """A C x H x W float32 feature map."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"Tensor3 needs three positive dims, got shape {v.shape}")
        v = v.astype(np.float32, copy=True)
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("tensor contains NaN or Inf")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_flat(cls, channels: int, height: int, width: int, values: Sequence[float]) -> Tensor3:
        flat = np.asarray(values, dtype=np.float32).ravel()
        if flat.size != channels * height * width:
            raise LengthMismatchError(
                f"length mismatch: expected {channels * height * width} values, got {flat.size}"
            )
        return cls(flat.reshape(channels, height, width))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class KeypointSet:
    """17 COCO keypoints as an array of (x, y, conf) rows plus image size."""

    points: np.ndarray
    image_h: float
    image_w: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_KEYPOINTS, 3):
            raise KeypointError(f"expected {NUM_KEYPOINTS} (x, y, conf) triples, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise KeypointError("keypoints contain NaN or Inf")
        conf = pts[:, 2]
        if np.any(conf < 0) or np.any(conf > 1):
            raise KeypointError("keypoint confidence outside [0, 1]")
        if not (self.image_h > 0 and self.image_w > 0):
            raise KeypointError("image size must be positive")
        object.__setattr__(self, "points", _frozen(pts.copy()))

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def conf(self) -> np.ndarray:
        return self.points[:, 2]

    def __eq__(self, other):
        if not isinstance(other, KeypointSet):
            return NotImplemented
        return (
            self.image_h == other.image_h
            and self.image_w == other.image_w
            and np.array_equal(self.points, other.points)
        )


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise ShapeError(f"label map must be 2-D and non-empty, got shape {lab.shape}")
        if self.num_classes < 1 or self.num_classes > 256:
            raise DataError(f"num_classes must be in [1, 256], got {self.num_classes}")
        if lab.dtype.kind not in "iu":
            raise DataError("label map must hold integer class ids")
        if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
            raise DataError(f"label out of range [0, {self.num_classes})")
        object.__setattr__(self, "labels", _frozen(lab.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.num_classes == other.num_classes and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    person_id: int = UNLABELED
    camera_id: int | None = None
    split: str = "train"
    feature_path: str | None = None
    keypoint_ref: str | None = None
    labelmap_path: str | None = None

    def __post_init__(self):
        if not self.image_id:
            raise ManifestError("image_id must be non-empty")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        if self.split in ("query", "gallery"):
            if self.person_id == UNLABELED or self.camera_id is None:
                raise ManifestError(
                    f"{self.split} entry {self.image_id!r} needs person_id and camera_id"
                )


# ---------------------------------------------------------------------------
# ETNS container


def encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        code = DTYPE_F32
    elif arr.dtype == np.uint8:
        code = DTYPE_U8
    else:
        raise UnsupportedFormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim not in (2, 3):
        raise UnsupportedFormatError(f"unsupported ndim {arr.ndim}")
    header = MAGIC + struct.pack("<BBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode_array(data: bytes) -> np.ndarray:
    data = bytes(data)
    if len(data) < 7 or data[:4] != MAGIC:
        raise BadMagicError("bad magic: not an ETNS file")
    version, code, ndim = struct.unpack_from("<BBB", data, 4)
    if version != VERSION:
        raise UnsupportedFormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise UnsupportedFormatError(f"unsupported dtype code {code}")
    if ndim not in (2, 3):
        raise UnsupportedFormatError(f"unsupported ndim {ndim}")
    offset = 7 + 4 * ndim
    if len(data) < offset:
        raise LengthMismatchError("length mismatch: truncated header")
    dims = struct.unpack_from(f"<{ndim}I", data, 7)
    dtype = _DTYPES[code]
    expected = math.prod(dims) * dtype.itemsize
    if len(data) - offset != expected:
        raise LengthMismatchError(
            f"length mismatch: header declares {expected} payload bytes, found {len(data) - offset}"
        )
    arr = np.frombuffer(data, dtype=dtype, offset=offset).reshape(dims)
    if code == DTYPE_F32 and not np.all(np.isfinite(arr)):
        raise NonFiniteError("non-finite payload")
    return arr.copy()


def read_tensor(data: bytes) -> Tensor3:
    arr = decode_array(data)
    if arr.dtype != np.float32 or arr.ndim != 3:
        raise UnsupportedFormatError("expected a 3-D f32 tensor")
    if min(arr.shape) < 1:
        raise ShapeError(f"tensor dims must be positive, got {arr.shape}")
    return Tensor3(arr)


def write_tensor(t: Tensor3) -> bytes:
    return encode_array(t.values)


def read_labelmap(data: bytes, num_classes: int) -> LabelMap:
    arr = decode_array(data)
    if arr.dtype != np.uint8 or arr.ndim != 2:
        raise UnsupportedFormatError("expected a 2-D u8 label map")
    return LabelMap(arr, num_classes)


def write_labelmap(lm: LabelMap) -> bytes:
    return encode_array(lm.labels)


def read_matrix(data: bytes) -> np.ndarray:
    arr = decode_array(data)
    if arr.dtype != np.float32 or arr.ndim != 2:
        raise UnsupportedFormatError("expected a 2-D f32 matrix")
    return arr


def write_matrix(m: np.ndarray) -> bytes:
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError("matrix must be 2-D")
    return encode_array(m.astype(np.float32))


def load_tensor(path: str | Path) -> Tensor3:
    return read_tensor(Path(path).read_bytes())


def save_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


# ---------------------------------------------------------------------------
# Keypoints (JSON lines)


def _parse_keypoint_record(obj: dict, lineno: int) -> tuple[str, KeypointSet]:
    try:
        image_id = obj["image_id"]
        w, h, kp = obj["w"], obj["h"], obj["kp"]
    except (KeyError, TypeError) as exc:
        raise KeypointError(f"line {lineno}: missing field {exc}") from None
    if not isinstance(image_id, str) or not image_id:
        raise KeypointError(f"line {lineno}: image_id must be a non-empty string")
    if not isinstance(kp, list) or len(kp) != NUM_KEYPOINTS:
        n = len(kp) if isinstance(kp, list) else "?"
        raise KeypointError(f"line {lineno}: expected {NUM_KEYPOINTS} keypoints, got {n}")
    for triple in kp:
        if not isinstance(triple, list) or len(triple) != 3:
            raise KeypointError(f"line {lineno}: each keypoint must be [x, y, conf]")
    try:
        return image_id, KeypointSet(np.asarray(kp, dtype=np.float64), float(h), float(w))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, KeypointError):
            raise KeypointError(f"line {lineno}: {exc}") from None
        raise KeypointError(f"line {lineno}: {exc}") from None


def load_keypoints(text: str) -> dict[str, KeypointSet]:
    out: dict[str, KeypointSet] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KeypointError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        image_id, kps = _parse_keypoint_record(obj, lineno)
        if image_id in out:
            raise DuplicateIdError(f"duplicate image_id {image_id!r}")
        out[image_id] = kps
    return out


def _fmt_float(x: float) -> float | int:
    x = float(x)
    return int(x) if x.is_integer() else x


def dump_keypoints(kps: dict[str, KeypointSet]) -> str:
    lines = []
    for image_id, k in kps.items():
        rec = {
            "image_id": image_id,
            "w": _fmt_float(k.image_w),
            "h": _fmt_float(k.image_h),
            "kp": [[float(v) for v in row] for row in k.points],
        }
        lines.append(json.dumps(rec, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# Manifest (CSV)


def _int_cell(value: str, name: str, lineno: int) -> int | None:
    value = value.strip()
    if value == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ManifestError(f"row {lineno}: {name} must be an integer, got {value!r}") from None


def load_manifest(text: str) -> list[ManifestEntry]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError("empty manifest") from None
    if [h.strip() for h in header] != MANIFEST_HEADER:
        raise ManifestError(f"bad header: expected {','.join(MANIFEST_HEADER)}")
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for lineno, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise ManifestError(f"row {lineno}: expected {len(MANIFEST_HEADER)} columns, got {len(row)}")
        image_id, pid, cam, split, feat, kp, lab = (c.strip() for c in row)
        person_id = _int_cell(pid, "person_id", lineno)
        entry = ManifestEntry(
            image_id=image_id,
            person_id=UNLABELED if person_id is None else person_id,
            camera_id=_int_cell(cam, "camera_id", lineno),
            split=split,
            feature_path=feat or None,
            keypoint_ref=kp or None,
            labelmap_path=lab or None,
        )
        if image_id in seen:
            raise DuplicateIdError(f"duplicate image_id {image_id!r}")
        seen.add(image_id)
        entries.append(entry)
    return entries


def dump_manifest(entries: Iterable[ManifestEntry]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for e in entries:
        writer.writerow(
            [
                e.image_id,
                "" if e.person_id == UNLABELED else e.person_id,
                "" if e.camera_id is None else e.camera_id,
                e.split,
                e.feature_path or "",
                e.keypoint_ref or "",
                e.labelmap_path or "",
            ]
        )
    return buf.getvalue()
