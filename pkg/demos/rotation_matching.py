"""
Why ORB steers its tests
========================

BRIEF compares fixed pixel pairs, so a rotated patch produces a
different bit string. ORB measures a patch orientation first and
rotates the pairs to match. This script rotates a scene by a few
angles and counts how often each descriptor's nearest neighbor lands
on the right point.
"""

import math

import numpy as np
from scipy import ndimage

from difet.describe import brief_describe, orb_extract
from difet.detect import fast_detect
from difet.raster import smooth, to_grayscale
from difet.synthetic import textured_image

SIZE = 384


def pair(angle_deg, seed=0):
    # rotate a larger canvas, then crop, so no filled-in borders appear
    big = math.ceil(SIZE * math.sqrt(2)) + 8
    g = to_grayscale(textured_image(big, big, seed=seed))
    r = np.clip(ndimage.rotate(g, angle_deg, reshape=False, order=3, mode="nearest"), 0, 1)
    o = (big - SIZE) // 2
    return g[o : o + SIZE, o : o + SIZE], r[o : o + SIZE, o : o + SIZE], (big - 1) / 2 - o


def orb(img):
    out = orb_extract(img)
    return [k for k, _ in out], np.array([d for _, d in out])


def brief(img):
    s = smooth(img, 2.0)
    kept = [(k, d) for k in fast_detect(img) if (d := brief_describe(s, k)) is not None][:500]
    return [k for k, _ in kept], np.array([d for _, d in kept])


def rate(extract, angle_deg):
    a, b, c = pair(angle_deg)
    th = math.radians(angle_deg)
    ka, da = extract(a)
    kb, db = extract(b)
    bits_a = np.unpackbits(da, axis=1).astype(np.int32)
    bits_b = np.unpackbits(db, axis=1).astype(np.int32)
    dist = bits_a @ (1 - bits_b).T + (1 - bits_a) @ bits_b.T
    hits = total = 0
    for i, k in enumerate(ka):
        x = c + math.cos(th) * (k.x - c) + math.sin(th) * (k.y - c)
        y = c - math.sin(th) * (k.x - c) + math.cos(th) * (k.y - c)
        if not (0 <= x < SIZE and 0 <= y < SIZE):
            continue
        total += 1
        j = int(dist[i].argmin())
        hits += dist[i, j] <= 64 and math.hypot(kb[j].x - x, kb[j].y - y) <= 3 * k.scale
    return hits / max(total, 1)


# %%
print("angle   ORB    BRIEF")
for angle in (0, 5, 15, 30, 60):
    print(f"{angle:5d}  {rate(orb, angle):5.1%}  {rate(brief, angle):5.1%}")

# %%
# BRIEF falls off quickly once the rotation passes a few degrees; ORB
# degrades more slowly. On this scene many corners are checkerboard
# crossings, whose intensity centroid sits almost on the keypoint, so
# ORB's orientation estimate is noisy there and its rate stays well
# below what cleaner imagery gives.
