"""SIFT-style difference-of-Gaussians detector and 128-d gradient descriptor.

Extrema are taken on the discrete DoG grid (no quadratic sub-pixel fit).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import maximum_filter, minimum_filter

from difet.describe.params import DescriptorParams
from difet.detect import Keypoint
from difet.raster import check_gray, smooth

SCALES_PER_OCTAVE = 3
BASE_SIGMA = 1.6
INPUT_SIGMA = 0.5
MIN_OCTAVE_DIM = 16
MIN_SIFT_SIZE = 32
BORDER = 5
ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
ORI_SIGMA_FACTOR = 1.5
ORI_RADIUS_FACTOR = 3.0
DESC_WIDTH = 4
DESC_BINS = 8
DESC_SAMPLES = 16
DESC_CELL_SIGMAS = 3.0
DESC_CLIP = 0.2
DEGENERATE_NORM = 1e-12
TWO_PI = 2 * math.pi


@dataclass
class ScaleSpace:
    """Gaussian images per octave, ``SCALES_PER_OCTAVE + 3`` per octave."""

    octaves: list[list[np.ndarray]]

    @classmethod
    def build(cls, img: np.ndarray) -> ScaleSpace:
        base = smooth(img, math.sqrt(BASE_SIGMA**2 - INPUT_SIGMA**2))
        n_layers = SCALES_PER_OCTAVE + 3
        increments = []
        for i in range(1, n_layers):
            prev = BASE_SIGMA * 2 ** ((i - 1) / SCALES_PER_OCTAVE)
            total = BASE_SIGMA * 2 ** (i / SCALES_PER_OCTAVE)
            increments.append(math.sqrt(total**2 - prev**2))
        octaves = []
        while min(base.shape) >= MIN_OCTAVE_DIM:
            layers = [base]
            for inc in increments:
                layers.append(smooth(layers[-1], inc))
            octaves.append(layers)
            base = layers[SCALES_PER_OCTAVE][::2, ::2]
        return cls(octaves)

    @staticmethod
    def layer_sigma(layer: int) -> float:
        """Blur of ``layer`` in its own octave's pixel units."""
        return BASE_SIGMA * 2 ** (layer / SCALES_PER_OCTAVE)

    def locate(self, scale: float) -> tuple[int, int]:
        """Octave and layer whose blur best matches an absolute ``scale``."""
        t = math.log2(max(scale, BASE_SIGMA) / BASE_SIGMA)
        octave = int(math.floor(t + 1e-9))
        layer = int(round((t - octave) * SCALES_PER_OCTAVE))
        if layer == SCALES_PER_OCTAVE:
            octave, layer = octave + 1, 0
        if octave >= len(self.octaves):
            octave, layer = len(self.octaves) - 1, SCALES_PER_OCTAVE
        return octave, layer


def _gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    padded = np.pad(img, 1, mode="edge")
    gx = (padded[1:-1, 2:] - padded[1:-1, :-2]) / 2
    gy = (padded[2:, 1:-1] - padded[:-2, 1:-1]) / 2
    return gx, gy


def curvature_ratio(dog: np.ndarray, y: int, x: int) -> float:
    """``trace^2 / det`` of the DoG Hessian at a pixel (inf when det <= 0)."""
    c = dog[y, x]
    dxx = dog[y, x + 1] + dog[y, x - 1] - 2 * c
    dyy = dog[y + 1, x] + dog[y - 1, x] - 2 * c
    dxy = (dog[y + 1, x + 1] - dog[y + 1, x - 1] - dog[y - 1, x + 1] + dog[y - 1, x - 1]) / 4
    det = dxx * dyy - dxy * dxy
    return math.inf if det <= 0 else (dxx + dyy) ** 2 / det


def orientation_peaks(gauss: np.ndarray, x: int, y: int, sigma: float) -> list[float]:
    """Dominant gradient orientations around (x, y) from a 36-bin histogram."""
    radius = int(round(ORI_RADIUS_FACTOR * ORI_SIGMA_FACTOR * sigma))
    h, w = gauss.shape
    x0, x1 = max(x - radius, 1), min(x + radius, w - 2)
    y0, y1 = max(y - radius, 1), min(y + radius, h - 2)
    patch = gauss[y0 - 1 : y1 + 2, x0 - 1 : x1 + 2]
    gx = (patch[1:-1, 2:] - patch[1:-1, :-2]) / 2
    gy = (patch[2:, 1:-1] - patch[:-2, 1:-1]) / 2
    dy, dx = np.mgrid[y0 - y : y1 - y + 1, x0 - x : x1 - x + 1]
    weight = np.exp(-(dx * dx + dy * dy) / (2 * (ORI_SIGMA_FACTOR * sigma) ** 2))
    inside = dx * dx + dy * dy <= radius * radius
    mag = np.hypot(gx, gy) * weight * inside
    ang = np.arctan2(gy, gx) % TWO_PI
    bins = np.floor(ang * ORI_BINS / TWO_PI + 0.5).astype(np.int64) % ORI_BINS
    hist = np.bincount(bins.ravel(), weights=mag.ravel(), minlength=ORI_BINS)
    # [1 4 6 4 1]/16 circular smoothing
    hist = (
        6 * hist
        + 4 * (np.roll(hist, 1) + np.roll(hist, -1))
        + (np.roll(hist, 2) + np.roll(hist, -2))
    ) / 16
    peak = hist.max()
    if peak <= 0:
        return []
    left, right = np.roll(hist, 1), np.roll(hist, -1)
    angles = []
    for k in np.nonzero((hist > left) & (hist >= right) & (hist >= ORI_PEAK_RATIO * peak))[0]:
        denom = left[k] - 2 * hist[k] + right[k]
        offset = 0.5 * (left[k] - right[k]) / denom if denom != 0 else 0.0
        angles.append(float(((k + offset) * TWO_PI / ORI_BINS) % TWO_PI))
    return angles


def sift_detect(img: np.ndarray, p: DescriptorParams = DescriptorParams()) -> list[Keypoint]:
    img = check_gray(img, MIN_SIFT_SIZE)
    space = ScaleSpace.build(img)
    footprint = np.ones((3, 3, 3), dtype=bool)
    footprint[1, 1, 1] = False
    edge_limit = (p.sift_edge_ratio + 1) ** 2 / p.sift_edge_ratio
    found = []
    for o, layers in enumerate(space.octaves):
        dog = np.stack([b - a for a, b in zip(layers[:-1], layers[1:])])
        hi = maximum_filter(dog, footprint=footprint, mode="nearest")
        lo = minimum_filter(dog, footprint=footprint, mode="nearest")
        extremum = (dog > hi) | (dog < lo)
        extremum &= np.abs(dog) >= p.sift_contrast_threshold
        extremum[0] = extremum[-1] = False
        extremum[:, :BORDER, :] = extremum[:, -BORDER:, :] = False
        extremum[:, :, :BORDER] = extremum[:, :, -BORDER:] = False
        mult = 2**o
        for layer, y, x in zip(*np.nonzero(extremum)):
            d = dog[layer]
            if curvature_ratio(d, y, x) > edge_limit:
                continue
            sigma = space.layer_sigma(layer)
            for angle in orientation_peaks(layers[layer], int(x), int(y), sigma):
                found.append(
                    Keypoint(
                        float(x * mult),
                        float(y * mult),
                        float(abs(d[y, x])),
                        scale=float(sigma * mult),
                        angle=float(angle),
                    )
                )
    return sorted(found, key=lambda k: (-k.response, k.y, k.x, k.angle))


def _bilinear(grid: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, grid.shape[1] - 1)
    y1 = np.minimum(y0 + 1, grid.shape[0] - 1)
    fx = xs - x0
    fy = ys - y0
    top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
    bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
    return top * (1 - fy) + bot * fy


class _DescriptorContext:
    def __init__(self, img: np.ndarray):
        self.space = ScaleSpace.build(img)
        self._grads: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def gradients(self, octave: int, layer: int):
        key = (octave, layer)
        if key not in self._grads:
            self._grads[key] = _gradients(self.space.octaves[octave][layer])
        return self._grads[key]


_GRID = np.arange(DESC_SAMPLES) - (DESC_SAMPLES - 1) / 2  # -7.5 .. 7.5


def _describe(ctx: _DescriptorContext, kp: Keypoint) -> np.ndarray | None:
    octave, layer = ctx.space.locate(kp.scale)
    gx, gy = ctx.gradients(octave, layer)
    h, w = gx.shape
    mult = 2**octave
    cx, cy = kp.x / mult, kp.y / mult
    sigma = kp.scale / mult
    spacing = DESC_WIDTH * DESC_CELL_SIGMAS * sigma / DESC_SAMPLES
    theta = kp.angle or 0.0
    c, s = math.cos(theta), math.sin(theta)
    v, u = np.meshgrid(_GRID, _GRID, indexing="ij")  # v: rows, u: columns
    du, dv = u * spacing, v * spacing
    xs = cx + c * du - s * dv
    ys = cy + s * du + c * dv
    if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
        return None
    sgx = _bilinear(gx, xs, ys)
    sgy = _bilinear(gy, xs, ys)
    mag = np.hypot(sgx, sgy)
    half_width = DESC_SAMPLES / 2
    mag = mag * np.exp(-(u * u + v * v) / (2 * half_width * half_width))
    ori = (np.arctan2(sgy, sgx) - theta) % TWO_PI

    rbin = v / DESC_WIDTH + (DESC_WIDTH - 1) / 2
    cbin = u / DESC_WIDTH + (DESC_WIDTH - 1) / 2
    obin = ori * DESC_BINS / TWO_PI
    r0, c0, o0 = np.floor(rbin), np.floor(cbin), np.floor(obin)
    fr, fc, fo = rbin - r0, cbin - c0, obin - o0
    r0, c0, o0 = r0.astype(np.int64), c0.astype(np.int64), o0.astype(np.int64)
    hist = np.zeros((DESC_WIDTH + 2, DESC_WIDTH + 2, DESC_BINS))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(
                    hist,
                    (r0 + dr + 1, c0 + dc + 1, (o0 + do) % DESC_BINS),
                    mag * wr * wc * wo,
                )
    vec = hist[1:-1, 1:-1, :].reshape(-1)
    norm = float(np.linalg.norm(vec))
    if norm <= DEGENERATE_NORM:
        return np.zeros(DESC_WIDTH * DESC_WIDTH * DESC_BINS, dtype=np.float32)
    vec = np.minimum(vec / norm, DESC_CLIP)
    vec = vec / np.linalg.norm(vec)
    return vec.astype(np.float32)


def sift_describe_many(img: np.ndarray, kps: list[Keypoint]) -> list[np.ndarray | None]:
    """Descriptors for many keypoints, sharing one scale space."""
    img = check_gray(img, MIN_SIFT_SIZE)
    ctx = _DescriptorContext(img)
    return [_describe(ctx, kp) for kp in kps]


def sift_describe(img: np.ndarray, kp: Keypoint) -> np.ndarray | None:
    return sift_describe_many(img, [kp])[0]
