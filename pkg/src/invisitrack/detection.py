"""Fluorescent marker detection by HSV hue gating and blob centroids."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

DEFAULT_MIN_BLOB_SIZE = 4
SATURATED_VALUE = 0.99

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DyeProfile:
    """Acceptance gate of one dye; hue on the 0-180 scale, S and V on 0-1."""

    name: str
    hue_range: tuple[float, float]
    min_saturation: float = 0.5
    min_value: float = 0.5
    exclude_saturated: bool = False

    def __post_init__(self):
        lo, hi = self.hue_range
        if not 0 <= lo <= hi < 180:
            raise ValueError(f"hue range {self.hue_range} must satisfy 0 <= lo <= hi < 180")
        if not (0 <= self.min_saturation <= 1 and 0 <= self.min_value <= 1):
            raise ValueError("saturation/value thresholds must lie in [0, 1]")

    def mask(self, hsv: np.ndarray) -> np.ndarray:
        h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
        lo, hi = self.hue_range
        m = (h >= lo) & (h <= hi) & (s >= self.min_saturation) & (v >= self.min_value)
        if self.exclude_saturated:
            m &= v <= SATURATED_VALUE
        return m


DYE_PROFILES = {
    "uv_red": DyeProfile("uv_red", (0.0, 15.0)),
    "uv_blue": DyeProfile("uv_blue", (110.0, 125.0)),
}


@dataclass(frozen=True)
class MarkerDetection:
    centroid: np.ndarray
    pixel_count: int
    dye: str
    camera_id: str = ""
    frame_index: int = 0

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "frame": int(self.frame_index),
            "dye": self.dye,
            "cx": float(self.centroid[0]),
            "cy": float(self.centroid[1]),
            "pixel_count": int(self.pixel_count),
        }


def rgb_to_hsv(color) -> tuple[float, float, float]:
    """Hexcone HSV of one 8-bit RGB triple; hue on 0-180, S and V on 0-1."""
    hsv = rgb_image_to_hsv(np.asarray(color, dtype=float).reshape(1, 1, 3))
    return tuple(float(x) for x in hsv[0, 0])


def rgb_image_to_hsv(rgb) -> np.ndarray:
    """Vectorised 8-bit RGB (..., 3) to HSV with hue in [0, 180)."""
    c = np.asarray(rgb, dtype=float) / 255.0
    r, g, b = c[..., 0], c[..., 1], c[..., 2]
    mx = c.max(axis=-1)
    mn = c.min(axis=-1)
    delta = mx - mn
    safe = np.where(delta > 0, delta, 1.0)
    h = np.zeros_like(mx)
    h = np.where(mx == r, ((g - b) / safe) % 6.0, h)
    h = np.where((mx == g) & (mx != r), (b - r) / safe + 2.0, h)
    h = np.where((mx == b) & (mx != r) & (mx != g), (r - g) / safe + 4.0, h)
    h = np.where(delta > 0, h * 30.0, 0.0)
    s = np.where(mx > 0, delta / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def detect_markers(hsv: np.ndarray, profile: DyeProfile, min_blob_size: int = DEFAULT_MIN_BLOB_SIZE,
                   camera_id: str = "", frame_index: int = 0) -> list[MarkerDetection]:
    """Gate pixels by ``profile`` and return V-weighted centroids of 8-connected blobs.

    Centroids are ``(x, y)`` = (column, row) with integer pixel centres.
    """
    hsv = np.asarray(hsv, dtype=float)
    if hsv.ndim != 3 or hsv.shape[2] != 3 or hsv.size == 0:
        raise ValueError("expected a non-empty (H, W, 3) HSV image")
    labels, n = ndimage.label(profile.mask(hsv), structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    ids = np.arange(1, n + 1)
    v = hsv[..., 2]
    counts = ndimage.sum_labels(np.ones_like(v), labels, ids)
    mass = ndimage.sum_labels(v, labels, ids)
    rows, cols = np.indices(v.shape)
    cx = ndimage.sum_labels(v * cols, labels, ids) / mass
    cy = ndimage.sum_labels(v * rows, labels, ids) / mass
    return [
        MarkerDetection(np.array([cx[k], cy[k]]), int(counts[k]), profile.name, camera_id, frame_index)
        for k in range(n)
        if counts[k] >= min_blob_size
    ]


def match_detections(detections: Sequence[MarkerDetection], predicted: Sequence[tuple[str, np.ndarray]],
                     gate_px: float) -> list[tuple[str, MarkerDetection]]:
    """Greedy closest-pair assignment of detections to predicted marker pixels.

    Pairs are taken in order of increasing distance; each marker and each
    detection is used at most once and pairs beyond ``gate_px`` are dropped.
    """
    if not gate_px > 0:
        raise ValueError("gate_px must be positive")
    if not detections or not predicted:
        return []
    D = np.array([d.centroid for d in detections], dtype=float)
    P = np.array([p for _, p in predicted], dtype=float)
    dist = np.linalg.norm(P[:, None, :] - D[None, :, :], axis=2)
    order = np.argsort(dist, axis=None, kind="stable")
    used_m, used_d = set(), set()
    out = []
    for flat in order:
        mi, di = np.unravel_index(flat, dist.shape)
        if dist[mi, di] > gate_px:
            break
        if mi in used_m or di in used_d:
            continue
        used_m.add(mi)
        used_d.add(di)
        out.append((predicted[mi][0], detections[di]))
    return out


def load_image(path) -> np.ndarray:
    """8-bit RGB image (PNG/PPM or anything Pillow reads)."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(rgb: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(path)


def save_detections(detections: Sequence[MarkerDetection], path) -> None:
    Path(path).write_text(json.dumps([d.to_dict() for d in detections], indent=1) + "\n")
