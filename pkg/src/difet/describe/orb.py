"""ORB: multi-scale FAST, Harris ranking, centroid orientation, steered BRIEF."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from difet.describe.brief import (
    CENTROID_RADIUS,
    DEFAULT_PATTERN,
    SamplingPattern,
    centroid_angle,
    steered_brief,
)
from difet.describe.params import DescriptorParams
from difet.detect import DetectorParams, Keypoint, fast_score, harris_response, nms_peaks
from difet.raster import build_pyramid, check_gray, smooth

MIN_ORB_SIZE = 31


def orb_border(pattern: SamplingPattern = DEFAULT_PATTERN) -> int:
    """Margin that keeps both the centroid disk and every steered test in bounds."""
    return max(CENTROID_RADIUS, pattern.steered_radius)


def orb_extract(
    img: np.ndarray,
    p: DescriptorParams = DescriptorParams(),
    dp: DetectorParams = DetectorParams(),
    pattern: SamplingPattern = DEFAULT_PATTERN,
) -> list[tuple[Keypoint, np.ndarray]]:
    """Oriented FAST keypoints with rotated-BRIEF descriptors.

    Candidates closer to a level's border than the steered pattern reaches
    are discarded before ranking, so every selected keypoint gets a
    descriptor. Output is in selection order: Harris score descending, then
    level, y, x.
    """
    img = check_gray(img, MIN_ORB_SIZE)
    pyr = build_pyramid(img, p.orb_n_levels, p.orb_scale_factor)
    fast_p = DetectorParams.fast(fast_threshold=p.orb_fast_threshold, nms_radius=dp.nms_radius)
    border = orb_border(pattern)

    cands = []  # (score, level, y, x)
    for level, limg in enumerate(pyr.levels):
        h, w = limg.shape
        if h <= 2 * border or w <= 2 * border:
            continue
        ys, xs = nms_peaks(fast_score(limg, fast_p), fast_p.nms_radius, 0.0)
        keep = (xs >= border) & (xs < w - border) & (ys >= border) & (ys < h - border)
        ys, xs = ys[keep], xs[keep]
        if len(ys) == 0:
            continue
        scores = harris_response(limg, dp)[ys, xs]
        cands.append((scores, np.full(len(ys), level), ys, xs))
    if not cands:
        return []
    scores, levels, ys, xs = (np.concatenate(c) for c in zip(*cands))
    order = np.lexsort((xs, ys, levels, -scores))[: p.orb_n_features]

    smoothed = {}
    out = []
    for i in order:
        level = int(levels[i])
        limg = pyr.levels[level]
        if level not in smoothed:
            smoothed[level] = smooth(limg, p.brief_blur_sigma)
        local = Keypoint(float(xs[i]), float(ys[i]), float(scores[i]))
        angle = centroid_angle(limg, local)
        desc = steered_brief(smoothed[level], local, angle, pattern)
        scale = pyr.level_scale(level)
        kp = replace(local, x=local.x * scale, y=local.y * scale, scale=scale, angle=angle)
        out.append((kp, desc))
    return out
