"""Pixel rasters and the shared image numerics every detector builds on.

Grayscale images are plain ``float64`` arrays of shape ``(height, width)``
with values in ``[0, 1]``. Integral images are ``(height + 1, width + 1)``
arrays whose row 0 and column 0 are zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from difet.errors import InvalidInputError, InvalidParameterError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MIN_PYRAMID_DIM = 16


@dataclass(frozen=True, eq=False)
class PixelImage:
    """An 8-bit raster with 1, 3 (RGB) or 4 (RGBA) interleaved channels."""

    pixels: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3, 4):
            raise InvalidInputError(f"unsupported pixel array shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise InvalidInputError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise InvalidInputError(f"pixels must be uint8, got {px.dtype}")
        px = np.ascontiguousarray(px)
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def from_buffer(cls, width: int, height: int, channels: int, data: bytes) -> PixelImage:
        if len(data) != width * height * channels:
            raise InvalidInputError(
                f"buffer holds {len(data)} bytes, expected {width}*{height}*{channels}"
            )
        arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
        return cls(arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def tobytes(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, PixelImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"PixelImage({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True)
class Pyramid:
    levels: list[np.ndarray] = field(repr=False)
    scale_factor: float

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def level_scale(self, level: int) -> float:
        """Multiplier taking level coordinates to level-0 coordinates."""
        return self.scale_factor**level


def to_grayscale(img: PixelImage) -> np.ndarray:
    px = img.pixels.astype(np.float64)
    if img.channels == 1:
        gray = px[:, :, 0] / 255.0
    else:
        r, g, b = LUMA_WEIGHTS
        gray = (r * px[:, :, 0] + g * px[:, :, 1] + b * px[:, :, 2]) / 255.0
    return np.clip(gray, 0.0, 1.0)


def check_gray(img: np.ndarray, min_size: int = 1, name: str = "image") -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    if h < min_size or w < min_size:
        raise InvalidInputError(f"{name} is {w}x{h}, needs at least {min_size}x{min_size}")
    return arr


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps over ``[-ceil(3 sigma), ceil(3 sigma)]``."""
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def smooth(arr: np.ndarray, sigma: float) -> np.ndarray:
    # unchecked separable Gaussian on any real grid, clamp-to-edge borders
    k = gaussian_kernel(sigma)
    out = correlate1d(arr, k, axis=1, mode="nearest")
    return correlate1d(out, k, axis=0, mode="nearest")


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    img = check_gray(img)
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    return np.clip(smooth(img, sigma), 0.0, 1.0)


def sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 Sobel derivatives with clamp-to-edge borders.

    Each derivative is (weighted sum of the leading side) minus (weighted
    sum of the trailing side), both accumulated in the same order, so a
    constant image gives exactly zero.
    """
    img = check_gray(img, 3)
    h, w = img.shape
    p = np.pad(img, 1, mode="edge")

    def side(rows: slice, cols: slice, axis: int) -> np.ndarray:
        a = p[rows, cols]
        if axis == 1:  # three vertical neighbors in one column
            return a[0:h] + 2 * a[1 : h + 1] + a[2 : h + 2]
        return a[:, 0:w] + 2 * a[:, 1 : w + 1] + a[:, 2 : w + 2]

    ix = side(slice(None), slice(2, w + 2), 1) - side(slice(None), slice(0, w), 1)
    iy = side(slice(2, h + 2), slice(None), 0) - side(slice(0, h), slice(None), 0)
    return ix, iy


def integral(img: np.ndarray) -> np.ndarray:
    img = check_gray(img)
    h, w = img.shape
    ii = np.zeros((h + 1, w + 1))
    np.cumsum(img, axis=0, out=ii[1:, 1:])
    np.cumsum(ii[1:, 1:], axis=1, out=ii[1:, 1:])
    return ii


def box_sum(ii: np.ndarray, x0: int, y0: int, x1: int, y1: int) -> float:
    """Sum of the image over columns ``[x0, x1)`` and rows ``[y0, y1)``."""
    h, w = ii.shape[0] - 1, ii.shape[1] - 1
    if not (0 <= x0 <= x1 <= w and 0 <= y0 <= y1 <= h):
        raise InvalidParameterError(
            f"rectangle ({x0},{y0})-({x1},{y1}) outside integral image of {w}x{h}"
        )
    return float(ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0])


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int, step: float) -> np.ndarray:
    """Sample ``img`` at ``(u * step, v * step)`` for every output pixel ``(u, v)``."""
    h, w = img.shape
    xs = np.minimum(np.arange(out_w) * step, w - 1)
    ys = np.minimum(np.arange(out_h) * step, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[None, :]
    fy = (ys - y0)[:, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def pyramid_dims(width: int, height: int, n_levels: int, scale_factor: float) -> list[tuple[int, int]]:
    dims = [(width, height)]
    for i in range(1, n_levels):
        s = scale_factor**i
        w, h = math.floor(width / s), math.floor(height / s)
        if w < MIN_PYRAMID_DIM or h < MIN_PYRAMID_DIM:
            break
        dims.append((w, h))
    return dims


def build_pyramid(img: np.ndarray, n_levels: int, scale_factor: float) -> Pyramid:
    """Bilinear pyramid; level ``i`` has size ``floor(base / scale_factor**i)``.

    Each level samples the previous one on a corner-aligned grid with step
    ``scale_factor``, so level-``i`` coordinates times ``scale_factor**i`` are
    level-0 coordinates. Construction stops before any level drops below
    16 pixels in either dimension.
    """
    img = check_gray(img)
    if not isinstance(n_levels, (int, np.integer)) or n_levels < 1:
        raise InvalidParameterError(f"n_levels must be an integer >= 1, got {n_levels}")
    if not scale_factor > 1:
        raise InvalidParameterError(f"scale_factor must be > 1, got {scale_factor}")
    h, w = img.shape
    levels = [img]
    for lw, lh in pyramid_dims(w, h, n_levels, scale_factor)[1:]:
        levels.append(resize_bilinear(levels[-1], lw, lh, scale_factor))
    return Pyramid(levels, float(scale_factor))
