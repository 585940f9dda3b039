"""BRIEF binary tests, intensity-centroid orientation and steered BRIEF."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from importlib import resources

import numpy as np

from difet.detect import Keypoint
from difet.errors import InvalidInputError

PATCH_SIZE = 31
PATCH_RADIUS = PATCH_SIZE // 2
N_TESTS = 256
DESCRIPTOR_BYTES = N_TESTS // 8
ANGLE_BINS = 30
CENTROID_RADIUS = 15
PATTERN_SEED = 20160701


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5).astype(np.int64)


@dataclass(frozen=True, eq=False)
class SamplingPattern:
    """256 point pairs as a ``(256, 4)`` int array of ``ax ay bx by`` offsets."""

    pairs: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64)
        if pairs.shape != (N_TESTS, 4):
            raise InvalidInputError(f"pattern must have shape (256, 4), got {pairs.shape}")
        if np.abs(pairs).max() > PATCH_RADIUS:
            raise InvalidInputError("pattern offsets must lie within the 31x31 patch")
        pairs.flags.writeable = False
        object.__setattr__(self, "pairs", pairs)

    def __eq__(self, other):
        return isinstance(other, SamplingPattern) and np.array_equal(self.pairs, other.pairs)

    @classmethod
    def parse(cls, text: str) -> SamplingPattern:
        rows = [[int(v) for v in line.split(" ")] for line in text.splitlines() if line]
        return cls(np.array(rows))

    def dumps(self) -> str:
        return "".join(" ".join(str(int(v)) for v in row) + "\n" for row in self.pairs)

    @cached_property
    def rotated(self) -> np.ndarray:
        """``(30, 256, 4)`` offsets rotated by each quantized angle and rounded."""
        out = np.empty((ANGLE_BINS, N_TESTS, 4), dtype=np.int64)
        for b in range(ANGLE_BINS):
            out[b] = rotate_pairs(self.pairs, b * 2 * math.pi / ANGLE_BINS)
        out.flags.writeable = False
        return out

    @cached_property
    def steered_radius(self) -> int:
        return int(np.abs(self.rotated).max())


def rotate_pairs(pairs: np.ndarray, theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    xs = pairs[:, 0::2].astype(np.float64)
    ys = pairs[:, 1::2].astype(np.float64)
    out = np.empty(pairs.shape, dtype=np.int64)
    out[:, 0::2] = _round_half_up(c * xs - s * ys)
    out[:, 1::2] = _round_half_up(s * xs + c * ys)
    return out


def generate_pattern(seed: int = PATTERN_SEED) -> SamplingPattern:
    """Isotropic Gaussian pairs (sigma = 31/5) clipped to the patch.

    This is how the shipped table was produced; degenerate and repeated
    pairs are redrawn.
    """
    rng = np.random.default_rng(seed)
    sigma = PATCH_SIZE / 5
    pairs: list[tuple[int, ...]] = []
    seen = set()
    while len(pairs) < N_TESTS:
        v = np.clip(np.rint(rng.normal(0.0, sigma, 4)), -PATCH_RADIUS, PATCH_RADIUS).astype(int)
        pair = tuple(int(x) for x in v)
        if pair[:2] == pair[2:] or pair in seen:
            continue
        seen.add(pair)
        pairs.append(pair)
    return SamplingPattern(np.array(pairs))


def load_default_pattern() -> SamplingPattern:
    text = resources.files("difet.describe").joinpath("data/brief_pattern.txt").read_text("utf-8")
    return SamplingPattern.parse(text)


DEFAULT_PATTERN = load_default_pattern()


def _fits(img: np.ndarray, ix: int, iy: int, radius: int) -> bool:
    h, w = img.shape
    return radius <= ix < w - radius and radius <= iy < h - radius


def _kp_pixel(kp: Keypoint) -> tuple[int, int]:
    return int(math.floor(kp.x + 0.5)), int(math.floor(kp.y + 0.5))


def _tests(img: np.ndarray, ix: int, iy: int, pairs: np.ndarray) -> np.ndarray:
    a = img[iy + pairs[:, 1], ix + pairs[:, 0]]
    b = img[iy + pairs[:, 3], ix + pairs[:, 2]]
    return np.packbits(a < b, bitorder="little")


def brief_describe(
    smoothed: np.ndarray, kp: Keypoint, pattern: SamplingPattern = DEFAULT_PATTERN
) -> np.ndarray | None:
    """32-byte descriptor; bit i is set when I(kp + a_i) < I(kp + b_i).

    ``smoothed`` must already be blurred (see ``DescriptorParams.brief_blur_sigma``).
    Returns ``None`` when the patch leaves the image.
    """
    ix, iy = _kp_pixel(kp)
    if not _fits(smoothed, ix, iy, PATCH_RADIUS):
        return None
    return _tests(smoothed, ix, iy, pattern.pairs)


def angle_bin(angle: float) -> int:
    return int(math.floor(angle / (2 * math.pi / ANGLE_BINS) + 0.5)) % ANGLE_BINS


def steered_brief(
    smoothed: np.ndarray, kp: Keypoint, angle: float, pattern: SamplingPattern = DEFAULT_PATTERN
) -> np.ndarray | None:
    ix, iy = _kp_pixel(kp)
    if not _fits(smoothed, ix, iy, pattern.steered_radius):
        return None
    return _tests(smoothed, ix, iy, pattern.rotated[angle_bin(angle)])


def _disk_offsets(radius: int) -> tuple[np.ndarray, np.ndarray]:
    dy, dx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    inside = dx * dx + dy * dy <= radius * radius
    return inside, np.arange(1, radius + 1)


def centroid_angle(img: np.ndarray, kp: Keypoint, radius: int = CENTROID_RADIUS) -> float | None:
    """Orientation of the intensity centroid of a disk around ``kp``.

    Moments are accumulated as ``d * (S(d) - S(-d))`` over mirrored row and
    column sums so a contrast-free patch yields exactly zero moments.
    """
    ix, iy = _kp_pixel(kp)
    if not _fits(img, ix, iy, radius):
        return None
    inside, ds = _disk_offsets(radius)
    patch = img[iy - radius : iy + radius + 1, ix - radius : ix + radius + 1] * inside
    cols = patch.sum(axis=0)
    rows = patch.sum(axis=1)
    m10 = float(np.dot(ds, cols[radius + ds] - cols[radius - ds]))
    m01 = float(np.dot(ds, rows[radius + ds] - rows[radius - ds]))
    if m10 == 0.0 and m01 == 0.0:
        return 0.0
    return math.atan2(m01, m10) % (2 * math.pi)


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.shape != b.shape:
        raise InvalidInputError(f"descriptor shapes differ: {a.shape} vs {b.shape}")
    return int(np.unpackbits(a ^ b).sum())


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"descriptor shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))
