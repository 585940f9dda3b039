"""
Detectors on a synthetic scene
==============================

Runs every algorithm on one seeded textured image, prints how many
features each one finds, and writes overlays you can open in any
image viewer.
"""

import sys
import time
from pathlib import Path

from difet import Algorithm, JobSpec, Task, execute_task, render_overlay, write_netpbm
from difet.bundle import bundle_create
from difet.netpbm import encode_netpbm
from difet.synthetic import textured_image

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(exist_ok=True)

# %%
# One 512x512 image. A spec needs a bundle id, so pack the image first.
img = textured_image(512, 512, seed=0)
bundle_create([("scene.ppm", encode_netpbm(img))], out / "scene.fib")

# %%
# Same image, seven pipelines.
for alg in Algorithm:
    spec = JobSpec.for_bundle(out / "scene.fib", alg)
    t = time.perf_counter()
    result = execute_task(Task(0, 0), img, spec)
    dt = time.perf_counter() - t
    dim = "-" if result.descriptors is None else result.descriptors.shape[1]
    print(f"{alg.value:>10}: {len(result.keypoints):5d} keypoints, descriptor dim {dim}, {dt:.2f} s")
    write_netpbm(out / f"overlay_{alg.value}.ppm", render_overlay(img, result.keypoints))

print(f"overlays written to {out}/")
