"""Corner detectors: Harris, Shi-Tomasi and FAST-9, with NMS and top-K selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import maximum_filter

from difet.errors import InvalidParameterError
from difet.raster import check_gray, smooth, sobel_gradients


@dataclass(frozen=True)
class Keypoint:
    """A detected feature in level-0 pixel coordinates.

    ``angle`` is in radians within ``[0, 2*pi)``, or ``None`` for detectors
    that do not assign an orientation.
    """

    x: float
    y: float
    response: float
    scale: float = 1.0
    angle: float | None = None


@dataclass(frozen=True)
class DetectorParams:
    harris_k: float = 0.04
    gaussian_window_sigma: float = 1.5
    response_threshold: float = 1e-4
    max_corners: int | None = None
    fast_threshold: float = 20 / 255
    fast_arc_length: int = 9
    nms_radius: int = 1

    def __post_init__(self):
        for name in ("harris_k", "gaussian_window_sigma", "response_threshold", "fast_threshold"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise InvalidParameterError(f"{name} must be a finite value >= 0, got {value}")
        if self.gaussian_window_sigma <= 0:
            raise InvalidParameterError("gaussian_window_sigma must be > 0")
        if self.max_corners is not None and self.max_corners < 1:
            raise InvalidParameterError(f"max_corners must be >= 1, got {self.max_corners}")
        if self.fast_arc_length != 9:
            raise InvalidParameterError("only FAST-9 (arc length 9) is supported")
        if self.nms_radius < 0:
            raise InvalidParameterError("nms_radius must be >= 0")

    @classmethod
    def harris(cls, **overrides) -> DetectorParams:
        return cls(**overrides)

    @classmethod
    def shi_tomasi(cls, **overrides) -> DetectorParams:
        return replace(cls(response_threshold=1e-3, max_corners=400), **overrides)

    @classmethod
    def fast(cls, **overrides) -> DetectorParams:
        return replace(cls(response_threshold=0.0), **overrides)


def window_radius(p: DetectorParams) -> int:
    return math.ceil(3.0 * p.gaussian_window_sigma)


def structure_tensor(img: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian-weighted sums of ``Ix^2``, ``Ix*Iy`` and ``Iy^2``."""
    ix, iy = sobel_gradients(img)
    return smooth(ix * ix, sigma), smooth(ix * iy, sigma), smooth(iy * iy, sigma)


def _zero_border(resp: np.ndarray, r: int) -> np.ndarray:
    if r > 0:
        resp[:r, :] = 0
        resp[-r:, :] = 0
        resp[:, :r] = 0
        resp[:, -r:] = 0
    return resp


def harris_response(img: np.ndarray, p: DetectorParams = DetectorParams()) -> np.ndarray:
    img = check_gray(img, 3)
    a, b, c = structure_tensor(img, p.gaussian_window_sigma)
    trace = a + c
    resp = (a * c - b * b) - p.harris_k * trace * trace
    return _zero_border(resp, window_radius(p))


def shi_tomasi_response(img: np.ndarray, p: DetectorParams = DetectorParams.shi_tomasi()) -> np.ndarray:
    """Smaller eigenvalue of the structure tensor at every pixel."""
    img = check_gray(img, 3)
    a, b, c = structure_tensor(img, p.gaussian_window_sigma)
    half_diff = (a - c) / 2
    resp = (a + c) / 2 - np.sqrt(half_diff * half_diff + b * b)
    return _zero_border(resp, window_radius(p))


def sort_keypoints(kps: list[Keypoint]) -> list[Keypoint]:
    """Canonical order: response descending, then y, then x (stable)."""
    return sorted(kps, key=lambda k: (-k.response, k.y, k.x))


def nms_peaks(resp: np.ndarray, radius: int, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    """Rows and columns of strict neighborhood maxima above ``threshold``."""
    size = 2 * radius + 1
    footprint = np.ones((size, size), dtype=bool)
    footprint[radius, radius] = False
    if radius > 0:
        neighbor_max = maximum_filter(resp, footprint=footprint, mode="constant", cval=-np.inf)
        mask = (resp > neighbor_max) & (resp > threshold)
    else:
        mask = resp > threshold
    return np.nonzero(mask)


def nms_select(resp: np.ndarray, p: DetectorParams = DetectorParams()) -> list[Keypoint]:
    ys, xs = nms_peaks(np.asarray(resp, dtype=np.float64), p.nms_radius, p.response_threshold)
    values = resp[ys, xs]
    # lexsort: last key is primary
    order = np.lexsort((xs, ys, -values))
    if p.max_corners is not None:
        order = order[: p.max_corners]
    return [Keypoint(float(xs[i]), float(ys[i]), float(values[i])) for i in order]


# Bresenham circle of radius 3, clockwise from 12 o'clock, as (dx, dy).
FAST_CIRCLE = (
    (0, -3), (1, -3), (2, -2), (3, -1), (3, 0), (3, 1), (2, 2), (1, 3),
    (0, 3), (-1, 3), (-2, 2), (-3, 1), (-3, 0), (-3, -1), (-2, -2), (-1, -3),
)  # fmt: skip
FAST_RADIUS = 3


def _arc_masks(n: int) -> list[int]:
    base = (1 << n) - 1
    return [((base << s) | (base >> (16 - s))) & 0xFFFF for s in range(16)]


def _arc_table(n: int) -> np.ndarray:
    # LUT over 16-bit ring masks: True when some circular run of n bits is set
    masks = np.arange(1 << 16, dtype=np.uint32)
    table = np.zeros(1 << 16, dtype=bool)
    for arc in _arc_masks(n):
        table |= (masks & arc) == arc
    return table


_ARC_TABLE = _arc_table(9)
_ARC_MASKS = _arc_masks(9)


def fast_score(img: np.ndarray, p: DetectorParams = DetectorParams.fast()) -> np.ndarray:
    """Segment-test score grid; 0 wherever the pixel is not a FAST corner.

    A corner's score is the largest sum of ``|I(circle) - I(center)|`` over
    any qualifying 9-pixel arc, brighter or darker.
    """
    img = check_gray(img, 2 * FAST_RADIUS + 1)
    h, w = img.shape
    t = p.fast_threshold
    r = FAST_RADIUS
    center = img[r : h - r, r : w - r]
    bright_bits = np.zeros(center.shape, dtype=np.uint32)
    dark_bits = np.zeros(center.shape, dtype=np.uint32)
    for i, (dx, dy) in enumerate(FAST_CIRCLE):
        diff = img[r + dy : h - r + dy, r + dx : w - r + dx] - center
        bright_bits |= (diff > t).astype(np.uint32) << i
        dark_bits |= (diff < -t).astype(np.uint32) << i
    corner = _ARC_TABLE[bright_bits] | _ARC_TABLE[dark_bits]
    score = np.zeros((h, w))
    ys, xs = np.nonzero(corner)
    if len(ys) == 0:
        return score
    ring = np.stack([img[ys + r + dy, xs + r + dx] for dx, dy in FAST_CIRCLE])
    absd = np.abs(ring - img[ys + r, xs + r])
    bb = bright_bits[ys, xs]
    db = dark_bits[ys, xs]
    best = np.zeros(len(ys))
    for start, arc in enumerate(_ARC_MASKS):
        ok = ((bb & arc) == arc) | ((db & arc) == arc)
        if not ok.any():
            continue
        total = np.zeros(len(ys))
        for k in range(p.fast_arc_length):
            total = total + absd[(start + k) % 16]
        np.maximum(best, np.where(ok, total, 0.0), out=best)
    score[ys + r, xs + r] = best
    return score


def fast_detect(img: np.ndarray, p: DetectorParams = DetectorParams.fast()) -> list[Keypoint]:
    score = fast_score(img, p)
    return nms_select(score, replace(p, response_threshold=0.0))
