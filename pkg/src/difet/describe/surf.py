"""Upright SURF: box-filter Hessian detector and 64-d Haar-wavelet descriptor."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import maximum_filter

from difet.describe.params import DescriptorParams
from difet.detect import Keypoint
from difet.errors import InvalidInputError
from difet.raster import check_gray, integral

BASE_FILTER = 9
DXY_WEIGHT = 0.9
# responses are computed on [0, 1] intensities; the threshold lives on 0-255
INTENSITY_SCALE_SQ = 255.0**2
DEGENERATE_NORM = 1e-9


def filter_sizes(octaves: int = 1) -> list[list[int]]:
    """Filter-size ladder per octave: 9,15,21,27 then 15,27,39,51, ..."""
    ladders = []
    for o in range(octaves):
        step = 6 * 2**o
        first = BASE_FILTER + 6 * (2**o - 1)
        ladders.append([first + i * step for i in range(4)])
    return ladders


def _box(ii: np.ndarray, x0, y0, x1, y1) -> np.ndarray:
    # x0..x1 and y0..y1 are exclusive-end pixel bounds, broadcast over arrays
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def hessian_response(ii: np.ndarray, size: int) -> np.ndarray:
    """Area-normalized ``Dxx*Dyy - (0.9*Dxy)^2`` on [0,1] intensities.

    Pixels where the ``size`` x ``size`` filter does not fit are 0.
    """
    h, w = ii.shape[0] - 1, ii.shape[1] - 1
    out = np.zeros((h, w))
    r = (size - 1) // 2
    lobe = size // 3
    if h < size or w < size:
        return out
    ys, xs = np.mgrid[r : h - r, r : w - r]
    half = lobe - 1  # lobes are 2*lobe - 1 wide across the derivative axis
    mid = lobe // 2
    dyy = _box(ii, xs - half, ys - r, xs + half + 1, ys + r + 1) - 3 * _box(
        ii, xs - half, ys - mid, xs + half + 1, ys + mid + 1
    )
    dxx = _box(ii, xs - r, ys - half, xs + r + 1, ys + half + 1) - 3 * _box(
        ii, xs - mid, ys - half, xs + mid + 1, ys + half + 1
    )
    dxy = (
        _box(ii, xs - lobe, ys - lobe, xs, ys)
        + _box(ii, xs + 1, ys + 1, xs + lobe + 1, ys + lobe + 1)
        - _box(ii, xs + 1, ys - lobe, xs + lobe + 1, ys)
        - _box(ii, xs - lobe, ys + 1, xs, ys + lobe + 1)
    )
    area = float(size * size)
    dxx, dyy, dxy = dxx / area, dyy / area, dxy / area
    out[r : h - r, r : w - r] = dxx * dyy - (DXY_WEIGHT * dxy) ** 2
    return out


def surf_detect(img: np.ndarray, p: DescriptorParams = DescriptorParams()) -> list[Keypoint]:
    """Blob keypoints at 3x3x3 maxima of the determinant-of-Hessian stack."""
    img = check_gray(img, BASE_FILTER)
    ii = integral(img)
    found = []
    for sizes in filter_sizes(p.surf_octaves):
        stack = np.stack([hessian_response(ii, s) for s in sizes]) * INTENSITY_SCALE_SQ
        footprint = np.ones((3, 3, 3), dtype=bool)
        footprint[1, 1, 1] = False
        neighbor_max = maximum_filter(stack, footprint=footprint, mode="constant", cval=-np.inf)
        peaks = (stack > neighbor_max) & (stack > p.surf_hessian_threshold)
        peaks[0] = peaks[-1] = False
        for si, y, x in zip(*np.nonzero(peaks)):
            found.append(
                Keypoint(float(x), float(y), float(stack[si, y, x]), scale=1.2 * sizes[si] / BASE_FILTER)
            )
    return sorted(found, key=lambda k: (-k.response, k.y, k.x, k.scale))


def _gauss(d2: np.ndarray, sigma: float) -> np.ndarray:
    return np.exp(-d2 / (2 * sigma * sigma))


def surf_describe(img: np.ndarray, kp: Keypoint) -> np.ndarray | None:
    """64-d upright SURF descriptor, or ``None`` if the window leaves the image.

    A 20s x 20s window (s = keypoint scale) is split into 4x4 subregions of
    5x5 samples. Each sample is a pair of Haar responses of size 2s, weighted
    by a Gaussian of sigma 3.3s around the keypoint; each subregion
    contributes (sum dx, sum dy, sum |dx|, sum |dy|).
    """
    img = check_gray(img)
    s = kp.scale
    if not s > 0:
        raise InvalidInputError(f"keypoint scale must be positive, got {s}")
    half = max(1, int(math.floor(s + 0.5)))  # Haar filter side is 2*half
    offs = (np.arange(20) - 9.5) * s
    sx = np.floor(kp.x + offs + 0.5).astype(np.int64)
    sy = np.floor(kp.y + offs + 0.5).astype(np.int64)
    h, w = img.shape
    x_lo, x_hi = sx.min() - half, sx.max() + half
    y_lo, y_hi = sy.min() - half, sy.max() + half
    if x_lo < 0 or y_lo < 0 or x_hi > w or y_hi > h:
        return None
    # local integral image keeps cumulative sums small, so flat patches cancel exactly enough
    ii = integral(img[y_lo:y_hi, x_lo:x_hi])
    gx = (sx - x_lo)[None, :]
    gy = (sy - y_lo)[:, None]
    dx = _box(ii, gx, gy - half, gx + half, gy + half) - _box(ii, gx - half, gy - half, gx, gy + half)
    dy = _box(ii, gx - half, gy, gx + half, gy + half) - _box(ii, gx - half, gy - half, gx + half, gy)
    weight = _gauss(offs[:, None] ** 2 + offs[None, :] ** 2, 3.3 * s)
    dx = dx * weight
    dy = dy * weight
    feats = np.stack([dx, dy, np.abs(dx), np.abs(dy)])  # (4, 20, 20)
    cells = feats.reshape(4, 4, 5, 4, 5).sum(axis=(2, 4))  # (4 feats, 4 rows, 4 cols)
    vec = cells.transpose(1, 2, 0).reshape(64)
    norm = float(np.linalg.norm(vec))
    if norm <= DEGENERATE_NORM:
        return np.zeros(64, dtype=np.float32)
    return (vec / norm).astype(np.float32)
