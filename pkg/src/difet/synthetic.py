"""Seeded textured test imagery.

Each image mixes a smoothed noise background, random checkerboard patches,
filled rectangles and Gaussian blobs. The same ``(seed, index)`` pair always
produces the same pixels, so corpora can be regenerated instead of stored.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy import ndimage

from difet.errors import InvalidParameterError
from difet.netpbm import write_netpbm
from difet.raster import PixelImage

DEFAULT_SIZE = (1024, 1024)


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def textured_gray(width: int, height: int, rng: np.random.Generator) -> np.ndarray:
    """Float image in [0, 1] with corners, edges and blobs at many scales."""
    if width < 1 or height < 1:
        raise InvalidParameterError(f"size must be positive, got {width}x{height}")
    img = ndimage.gaussian_filter(rng.random((height, width)), 6.0, mode="reflect")
    img = (img - img.min()) / max(float(np.ptp(img)), 1e-12) * 0.5 + 0.25
    area = width * height
    yy, xx = np.mgrid[0:height, 0:width]

    for _ in range(max(1, area // 16384)):
        cw = int(rng.integers(4, 13))
        pw = int(rng.integers(3, 9)) * cw
        ph = int(rng.integers(3, 9)) * cw
        x0 = int(rng.integers(0, max(1, width - pw)))
        y0 = int(rng.integers(0, max(1, height - ph)))
        lo, hi = sorted(rng.uniform(0.0, 1.0, 2))
        sub = img[y0 : y0 + ph, x0 : x0 + pw]
        sy, sx = np.indices(sub.shape)
        sub[...] = np.where(((sy // cw) + (sx // cw)) % 2 == 0, lo, hi)

    for _ in range(max(1, area // 8192)):
        rw, rh = (int(v) for v in rng.integers(6, 40, 2))
        x0 = int(rng.integers(0, max(1, width - rw)))
        y0 = int(rng.integers(0, max(1, height - rh)))
        img[y0 : y0 + rh, x0 : x0 + rw] = rng.uniform(0.0, 1.0)

    for _ in range(max(1, area // 8192)):
        cx, cy = rng.uniform(0, width), rng.uniform(0, height)
        s = rng.uniform(2.0, 12.0)
        r = math.ceil(3 * s)
        x0, x1 = max(0, int(cx) - r), min(width, int(cx) + r + 1)
        y0, y1 = max(0, int(cy) - r), min(height, int(cy) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        g = np.exp(-((xx[y0:y1, x0:x1] - cx) ** 2 + (yy[y0:y1, x0:x1] - cy) ** 2) / (2 * s * s))
        img[y0:y1, x0:x1] += rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.6) * g

    img += rng.normal(0.0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def textured_image(width: int, height: int, seed: int = 0, index: int = 0, channels: int = 3) -> PixelImage:
    if channels not in (1, 3):
        raise InvalidParameterError("channels must be 1 or 3")
    rng = _rng(seed, index)
    gray = textured_gray(width, height, rng)
    if channels == 1:
        px = np.round(gray * 255)[..., None]
    else:
        tint = rng.uniform(0.85, 1.15, 3)
        px = np.round(np.clip(gray[..., None] * tint, 0.0, 1.0) * 255)
    return PixelImage(px.astype(np.uint8))


def generate_corpus(out_dir, count: int, size=DEFAULT_SIZE, seed: int = 0, channels: int = 3) -> list[Path]:
    """Write ``count`` images named ``synth_00000.ppm`` (or ``.pgm``) into ``out_dir``."""
    if count < 0:
        raise InvalidParameterError(f"count must be >= 0, got {count}")
    width, height = size
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "ppm" if channels == 3 else "pgm"
    paths = []
    for i in range(count):
        path = out / f"synth_{i:05d}.{ext}"
        write_netpbm(path, textured_image(width, height, seed, i, channels))
        paths.append(path)
    return paths


def square_scene(size: int = 64, square: int = 32) -> PixelImage:
    """Black image with a centered white square."""
    px = np.zeros((size, size, 1), np.uint8)
    a = (size - square) // 2
    px[a : a + square, a : a + square] = 255
    return PixelImage(px)


def blob_scene(size: int = 64, sigma: float = 4.0, amplitude: float = 1.0) -> np.ndarray:
    """Gray float image with one bright Gaussian blob centered on pixel (size//2, size//2)."""
    c = size // 2
    yy, xx = np.mgrid[0:size, 0:size]
    return amplitude * np.exp(-((xx - c) ** 2 + (yy - c) ** 2) / (2 * sigma * sigma))


def step_edge_scene(size: int = 64) -> np.ndarray:
    """Left half black, right half white."""
    img = np.zeros((size, size))
    img[:, size // 2 :] = 1.0
    return img
