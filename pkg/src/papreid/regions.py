"""Horizontal region bands on a feature map: keypoint-delimited (PAP) and even stripes (PCB).

Band geometry in image space, with anchors averaged over the left/right
keypoints whose confidence reaches ``tau``:

    head         [0, y_sho)          needs a face point and a shoulder
    upper torso  [y_sho, y_mid)      needs shoulders and hips; y_mid = (y_sho + y_hip) / 2
    lower torso  [y_mid, y_hip)      needs shoulders and hips
    upper leg    [y_hip, y_knee)     needs hips and knees
    lower leg    [y_knee, y_ank)     needs knees and ankles
    foot         [y_ank, y_ank + foot_ratio * (y_ank - y_knee))   needs ankles;
                 clipped to the image, runs to the bottom if knees are missing,
                 never shorter than the ankle's own row
    upper body   [0, y_hip)          needs hips
    lower body   [y_hip, image_h)    needs hips
    full body    [0, image_h)        always

Band edges map to rows with the floor of ``map_y_to_row``, except that an
edge at or below the image bottom maps to H: a band ending there covers the
last row and a band starting there is empty.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .data_model import KeypointSet

log = logging.getLogger(__name__)

PAP_PART_NAMES = (
    "head",
    "upper_torso",
    "lower_torso",
    "upper_leg",
    "lower_leg",
    "foot",
    "upper_body",
    "lower_body",
    "full_body",
)
NUM_PAP_PARTS = len(PAP_PART_NAMES)

FACE = (0, 1, 2, 3, 4)
SHOULDERS = (5, 6)
HIPS = (11, 12)
KNEES = (13, 14)
ANKLES = (15, 16)

_ROW_EPS = 1e-6


@dataclass(frozen=True)
class RegionBand:
    part_id: int
    row_start: int = 0
    row_end: int = 0
    visible: bool = False

    def __post_init__(self):
        if self.visible:
            if not 0 <= self.row_start < self.row_end:
                raise ValueError(f"visible band needs 0 <= start < end, got [{self.row_start}, {self.row_end})")
        elif self.row_start != 0 or self.row_end != 0:
            raise ValueError("invisible band must use the [0, 0) convention")

    @property
    def rows(self) -> int:
        return self.row_end - self.row_start


@dataclass(frozen=True)
class RegionConfig:
    tau: float = 0.2
    foot_ratio: float = 0.5

    @classmethod
    def from_mapping(cls, cfg) -> RegionConfig:
        kwargs = {}
        if "tau" in cfg:
            kwargs["tau"] = float(cfg["tau"])
        if "foot_ratio" in cfg:
            kwargs["foot_ratio"] = float(cfg["foot_ratio"])
        return cls(**kwargs)


def map_y_to_row(y: float, image_h: float, H: int) -> int:
    """Map an image y coordinate to a feature-map row in [0, H)."""
    y = min(max(float(y), 0.0), image_h - _ROW_EPS * image_h)
    return min(max(math.floor(y * H / image_h), 0), H - 1)


def _boundary(y: float, image_h: float, H: int) -> int:
    """Row boundary for a band edge; the image bottom maps to H."""
    if y >= image_h:
        return H
    return map_y_to_row(y, image_h, H)


def _anchor(kps: KeypointSet, idx: tuple[int, ...], tau: float) -> float | None:
    ys = [kps.points[i, 1] for i in idx if kps.points[i, 2] >= tau]
    if not ys:
        return None
    return float(np.mean(ys))


def _band(part_id: int, y0: float | None, y1: float | None, image_h: float, H: int) -> RegionBand:
    if y0 is None or y1 is None:
        return RegionBand(part_id)
    start = _boundary(y0, image_h, H)
    end = _boundary(y1, image_h, H)
    if end <= start:
        return RegionBand(part_id)
    return RegionBand(part_id, start, end, True)


def _foot_band(y_ank: float | None, y_end: float | None, image_h: float, H: int) -> RegionBand:
    # at least the ankle row, so a short knee-to-ankle extent never hides a
    # foot that would be visible without knees
    if y_ank is None:
        return RegionBand(5)
    start = _boundary(y_ank, image_h, H)
    if start >= H:
        return RegionBand(5)
    return RegionBand(5, start, max(start + 1, _boundary(y_end, image_h, H)), True)


def pap_regions(kps: KeypointSet, H: int, cfg: RegionConfig | None = None) -> list[RegionBand]:
    """Return the 9 PAP bands in the order of ``PAP_PART_NAMES``.

    Degenerate keypoints never raise; they only make bands invisible.
    """
    cfg = cfg or RegionConfig()
    if H < NUM_PAP_PARTS:
        log.warning("feature map has %d rows; fewer than %d makes PAP bands coarse", H, NUM_PAP_PARTS)
    tau = cfg.tau
    h = kps.image_h
    has_face = any(kps.points[i, 2] >= tau for i in FACE)
    y_sho = _anchor(kps, SHOULDERS, tau)
    y_hip = _anchor(kps, HIPS, tau)
    y_knee = _anchor(kps, KNEES, tau)
    y_ank = _anchor(kps, ANKLES, tau)
    y_mid = None if y_sho is None or y_hip is None else (y_sho + y_hip) / 2.0

    head_end = y_sho if has_face else None
    torso_start = y_sho if y_hip is not None else None
    torso_end = y_hip if y_sho is not None else None
    leg_start = y_hip if y_knee is not None else None
    lower_leg_start = y_knee if y_ank is not None else None
    foot_end = None
    if y_ank is not None:
        if y_knee is None or math.isinf(cfg.foot_ratio):
            foot_end = h
        else:
            foot_end = min(h, y_ank + cfg.foot_ratio * (y_ank - y_knee))

    return [
        _band(0, 0.0, head_end, h, H),
        _band(1, torso_start, y_mid, h, H),
        _band(2, y_mid, torso_end, h, H),
        _band(3, leg_start, y_knee, h, H),
        _band(4, lower_leg_start, y_ank, h, H),
        _foot_band(y_ank, foot_end, h, H),
        _band(6, 0.0, y_hip, h, H),
        _band(7, y_hip, h if y_hip is not None else None, h, H),
        RegionBand(8, 0, H, True),
    ]


def pcb_stripes(P: int, H: int) -> list[RegionBand]:
    if P < 1:
        raise ValueError(f"need at least one stripe, got P={P}")
    if P > H:
        raise ValueError(f"cannot split {H} rows into {P} stripes")
    return [RegionBand(p, p * H // P, (p + 1) * H // P, True) for p in range(P)]
