"""Keypoint files (``.kp``) and keypoint overlays.

A keypoint file is UTF-8 text with ``\\n`` line endings::

    DIFET-KP 1 <algorithm> <count>
    <x> <y> <response> <scale> <angle> [<descriptor>]
    ...

Reals use 6-significant-digit scientific notation and a missing angle is
written as ``-``. Binary descriptors are 64 lowercase hex digits; float
descriptors are ``f32:`` followed by comma-separated 9-significant-digit
values.
"""

from __future__ import annotations

import os
import re
from pathlib import Path

import numpy as np

from difet.detect import Keypoint
from difet.engine import Algorithm, JobSpec, TaskResult
from difet.errors import KeypointFileError
from difet.raster import PixelImage

MAGIC = "DIFET-KP"
FORMAT_VERSION = "1"
RED = (255, 0, 0)
_HEX_RE = re.compile(r"[0-9a-f]{64}")


def _real(v: float) -> str:
    return f"{v:.5e}"


def format_result(result: TaskResult, algorithm) -> str:
    alg = Algorithm.parse(algorithm)
    lines = [f"{MAGIC} {FORMAT_VERSION} {alg.value} {len(result.keypoints)}"]
    descs = result.descriptors
    for i, k in enumerate(result.keypoints):
        fields = [_real(k.x), _real(k.y), _real(k.response), _real(k.scale)]
        fields.append("-" if k.angle is None else _real(k.angle))
        if descs is not None:
            d = descs[i]
            if d.dtype == np.uint8:
                fields.append(d.tobytes().hex())
            else:
                fields.append("f32:" + ",".join(f"{float(v):.8e}" for v in d))
        lines.append(" ".join(fields))
    return "\n".join(lines) + "\n"


def result_filename(entry_index: int) -> str:
    return f"{entry_index:06d}.kp"


def write_result(result: TaskResult, spec: JobSpec | Algorithm | str, directory) -> Path:
    alg = spec.algorithm if isinstance(spec, JobSpec) else spec
    path = Path(directory) / result_filename(result.entry_index)
    text = format_result(result, alg)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write keypoint file: {exc.strerror}", os.fspath(path)) from exc
    return path


def _parse_real(tok: str, what: str, lineno: int) -> float:
    try:
        return float(tok)
    except ValueError:
        raise KeypointFileError(f"bad {what} value {tok!r}", lineno) from None


def parse_result(text: str, entry_index: int = 0) -> tuple[Algorithm, TaskResult]:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise KeypointFileError("empty file", 1)
    head = lines[0].split(" ")
    if len(head) != 4 or head[0] != MAGIC:
        raise KeypointFileError(f"bad header {lines[0]!r}", 1)
    if head[1] != FORMAT_VERSION:
        raise KeypointFileError(f"unsupported format version {head[1]}", 1)
    try:
        alg = Algorithm.parse(head[2])
    except ValueError:
        raise KeypointFileError(f"unknown algorithm {head[2]!r}", 1) from None
    try:
        count = int(head[3])
    except ValueError:
        raise KeypointFileError(f"bad record count {head[3]!r}", 1) from None
    body = lines[1:]
    if count != len(body):
        raise KeypointFileError(f"header declares {count} records but {len(body)} follow", 1)

    kind = alg.descriptor_kind
    kps = []
    descs = []
    for lineno, line in enumerate(body, start=2):
        toks = line.split(" ")
        want = 5 if kind is None else 6
        if len(toks) != want:
            raise KeypointFileError(f"expected {want} fields, got {len(toks)}", lineno)
        x, y, resp, scale = (_parse_real(t, n, lineno) for t, n in zip(toks, ("x", "y", "response", "scale")))
        angle = None if toks[4] == "-" else _parse_real(toks[4], "angle", lineno)
        kps.append(Keypoint(x, y, resp, scale, angle))
        if kind == "binary":
            if not _HEX_RE.fullmatch(toks[5]):
                raise KeypointFileError("binary descriptor must be 64 lowercase hex digits", lineno)
            descs.append(np.frombuffer(bytes.fromhex(toks[5]), np.uint8))
        elif kind == "float":
            if not toks[5].startswith("f32:"):
                raise KeypointFileError("float descriptor must start with 'f32:'", lineno)
            vals = toks[5][4:].split(",")
            descs.append(np.array([_parse_real(v, "descriptor", lineno) for v in vals], dtype=np.float32))
    descriptors = None
    if kind == "binary":
        descriptors = np.stack(descs) if descs else np.zeros((0, 32), np.uint8)
    elif kind == "float":
        dims = {len(d) for d in descs}
        if len(dims) > 1:
            raise KeypointFileError("float descriptors have inconsistent lengths", 0)
        dim = dims.pop() if dims else (64 if alg == Algorithm.SURF else 128)
        descriptors = np.stack(descs) if descs else np.zeros((0, dim), np.float32)
    return alg, TaskResult(entry_index, tuple(kps), descriptors)


def read_result(path) -> TaskResult:
    """Parse a ``.kp`` file; the entry index comes from its file name.

    ``dropped_count`` and ``elapsed_micros`` are not stored and read back as 0.
    """
    path = Path(path)
    try:
        entry_index = int(path.stem)
    except ValueError:
        entry_index = 0
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_result(text, entry_index)[1]


def render_overlay(img: PixelImage, keypoints) -> PixelImage:
    """Copy of ``img`` (promoted to RGB) with a red plus-shaped mark per keypoint."""
    px = img.pixels
    if img.channels == 1:
        out = np.repeat(px, 3, axis=2)
    else:
        out = px.copy()
    h, w = out.shape[:2]
    for k in keypoints:
        cx, cy = int(np.floor(k.x + 0.5)), int(np.floor(k.y + 0.5))
        for dx, dy in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            x, y = cx + dx, cy + dy
            if 0 <= x < w and 0 <= y < h:
                out[y, x, :3] = RED
                if out.shape[2] == 4:
                    out[y, x, 3] = 255
    return PixelImage(out)
