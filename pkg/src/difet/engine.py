"""Map-only job execution: one task per bundle entry, deterministic merge.

There is no shuffle or reduce phase. Each task turns one image into a
:class:`TaskResult`; the merge step orders results by entry index.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import struct
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

import numpy as np

from difet.bundle import Bundle, bundle_id
from difet.describe import (
    DescriptorParams,
    brief_describe,
    orb_extract,
    sift_describe_many,
    sift_detect,
    surf_describe,
    surf_detect,
)
from difet.detect import (
    DetectorParams,
    Keypoint,
    fast_detect,
    harris_response,
    nms_select,
    shi_tomasi_response,
)
from difet.errors import DifetError, InvalidParameterError, JobError
from difet.netpbm import decode_image
from difet.raster import PixelImage, smooth, to_grayscale

log = logging.getLogger(__name__)


class Algorithm(str, Enum):
    HARRIS = "harris"
    SHI_TOMASI = "shi-tomasi"
    FAST = "fast"
    BRIEF = "brief"
    ORB = "orb"
    SURF = "surf"
    SIFT = "sift"

    @classmethod
    def parse(cls, name) -> Algorithm:
        if isinstance(name, Algorithm):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for alg in cls:
            if alg.value == key:
                return alg
        raise InvalidParameterError(f"unknown algorithm {name!r}")

    @property
    def descriptor_kind(self) -> str | None:
        return {Algorithm.BRIEF: "binary", Algorithm.ORB: "binary",
                Algorithm.SURF: "float", Algorithm.SIFT: "float"}.get(self)  # fmt: skip


def default_detector_params(alg: Algorithm) -> DetectorParams:
    if alg == Algorithm.SHI_TOMASI:
        return DetectorParams.shi_tomasi()
    if alg in (Algorithm.FAST, Algorithm.BRIEF):
        return DetectorParams.fast()
    return DetectorParams.harris()


@dataclass(frozen=True)
class JobSpec:
    bundle_id: bytes
    algorithm: Algorithm
    detector_params: DetectorParams
    descriptor_params: DescriptorParams = DescriptorParams()
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        if len(self.bundle_id) != 32:
            raise InvalidParameterError("bundle_id must be a 32-byte digest")

    @classmethod
    def for_bundle(
        cls,
        bundle_path,
        algorithm,
        detector_params: DetectorParams | None = None,
        descriptor_params: DescriptorParams | None = None,
        output_dir=None,
    ) -> JobSpec:
        alg = Algorithm.parse(algorithm)
        return cls(
            bundle_id(bundle_path),
            alg,
            detector_params or default_detector_params(alg),
            descriptor_params or DescriptorParams(),
            None if output_dir is None else os.fspath(output_dir),
        )

    def to_bytes(self) -> bytes:
        doc = {
            "bundle_id": self.bundle_id.hex(),
            "algorithm": self.algorithm.value,
            "detector_params": dataclasses.asdict(self.detector_params),
            "descriptor_params": dataclasses.asdict(self.descriptor_params),
            "output_dir": self.output_dir,
        }
        return json.dumps(doc, sort_keys=True).encode("utf-8")

    @classmethod
    def from_bytes(cls, data: bytes) -> JobSpec:
        doc = json.loads(data.decode("utf-8"))
        return cls(
            bytes.fromhex(doc["bundle_id"]),
            Algorithm.parse(doc["algorithm"]),
            DetectorParams(**doc["detector_params"]),
            DescriptorParams(**doc["descriptor_params"]),
            doc.get("output_dir"),
        )


@dataclass(frozen=True)
class Task:
    task_id: int
    entry_index: int
    attempt: int = 0


@dataclass(frozen=True, eq=False)
class TaskResult:
    """Features extracted from one entry.

    ``descriptors`` is an ``(n, 32)`` uint8 array for binary descriptors or
    an ``(n, d)`` float32 array for float ones, row-aligned with
    ``keypoints``; ``None`` for detector-only algorithms.
    """

    entry_index: int
    keypoints: tuple[Keypoint, ...] = ()
    descriptors: np.ndarray | None = None
    dropped_count: int = 0
    elapsed_micros: int = 0
    error: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "keypoints", tuple(self.keypoints))
        if self.descriptors is not None and len(self.descriptors) != len(self.keypoints):
            raise InvalidParameterError("descriptors must align 1:1 with keypoints")

    @property
    def ok(self) -> bool:
        return self.error is None

    def __eq__(self, other):
        if not isinstance(other, TaskResult):
            return NotImplemented
        if (self.descriptors is None) != (other.descriptors is None):
            return False
        if self.descriptors is not None and not (
            self.descriptors.dtype == other.descriptors.dtype
            and np.array_equal(self.descriptors, other.descriptors)
        ):
            return False
        return (self.entry_index, self.keypoints, self.dropped_count, self.elapsed_micros, self.error) == (
            other.entry_index, other.keypoints, other.dropped_count, other.elapsed_micros, other.error
        )  # fmt: skip

    def without_timing(self) -> TaskResult:
        return dataclasses.replace(self, elapsed_micros=0)

    # -- exact binary encoding used on the wire --

    _HEAD = struct.Struct("<IIIQBBH")
    _KP = struct.Struct("<ddddBd")

    def to_bytes(self) -> bytes:
        err = (self.error or "").encode("utf-8")
        if self.descriptors is None:
            kind, dim = 0, 0
        else:
            kind = 1 if self.descriptors.dtype == np.uint8 else 2
            dim = self.descriptors.shape[1]
        parts = [
            self._HEAD.pack(
                self.entry_index, len(self.keypoints), self.dropped_count,
                self.elapsed_micros, kind, self.error is not None, dim,
            ),  # fmt: skip
            struct.pack("<I", len(err)),
            err,
        ]
        for k in self.keypoints:
            parts.append(self._KP.pack(k.x, k.y, k.response, k.scale, k.angle is not None, k.angle or 0.0))
        if kind == 1:
            parts.append(np.ascontiguousarray(self.descriptors, dtype=np.uint8).tobytes())
        elif kind == 2:
            parts.append(np.ascontiguousarray(self.descriptors, dtype="<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> TaskResult:
        try:
            entry, n, dropped, elapsed, kind, has_err, dim = cls._HEAD.unpack_from(data, 0)
            pos = cls._HEAD.size
            (elen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            error = data[pos : pos + elen].decode("utf-8") if has_err else None
            pos += elen
            kps = []
            for _ in range(n):
                x, y, r, s, has_angle, a = cls._KP.unpack_from(data, pos)
                pos += cls._KP.size
                kps.append(Keypoint(x, y, r, s, a if has_angle else None))
            descs = None
            if kind == 1:
                descs = np.frombuffer(data, np.uint8, n * dim, pos).reshape(n, dim).copy()
                pos += n * dim
            elif kind == 2:
                descs = np.frombuffer(data, "<f4", n * dim, pos).reshape(n, dim).astype(np.float32)
                pos += 4 * n * dim
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise DifetError(f"malformed task result bytes: {exc}") from None
        if pos != len(data):
            raise DifetError(f"{len(data) - pos} trailing bytes after task result")
        return cls(entry, tuple(kps), descs, dropped, elapsed, error)


@dataclass
class JobReport:
    algorithm: Algorithm
    entry_counts: dict[int, int] = field(default_factory=dict)
    failed: dict[int, str] = field(default_factory=dict)
    total_features: int = 0
    wall_seconds: float = 0.0
    worker_count: int = 1

    @property
    def n_images(self) -> int:
        return len(self.entry_counts) + len(self.failed)


# -- per-algorithm pipelines: gray image -> (keypoints, descriptors, dropped) --


def _keep_described(kps, descs, dtype, dim):
    pairs = [(k, d) for k, d in zip(kps, descs) if d is not None]
    dropped = len(kps) - len(pairs)
    if not pairs:
        return [], np.zeros((0, dim), dtype), dropped
    return [k for k, _ in pairs], np.stack([d for _, d in pairs]).astype(dtype), dropped


def _run_brief(gray, spec):
    kps = fast_detect(gray, spec.detector_params)
    smoothed = smooth(gray, spec.descriptor_params.brief_blur_sigma)
    return _keep_described(kps, [brief_describe(smoothed, k) for k in kps], np.uint8, 32)


def _run_orb(gray, spec):
    pairs = orb_extract(gray, spec.descriptor_params, spec.detector_params)
    return _keep_described([k for k, _ in pairs], [d for _, d in pairs], np.uint8, 32)


def _run_surf(gray, spec):
    kps = surf_detect(gray, spec.descriptor_params)
    return _keep_described(kps, [surf_describe(gray, k) for k in kps], np.float32, 64)


def _run_sift(gray, spec):
    kps = sift_detect(gray, spec.descriptor_params)
    return _keep_described(kps, sift_describe_many(gray, kps), np.float32, 128)


PIPELINES: dict[Algorithm, Callable] = {
    Algorithm.HARRIS: lambda g, s: (nms_select(harris_response(g, s.detector_params), s.detector_params), None, 0),
    Algorithm.SHI_TOMASI: lambda g, s: (nms_select(shi_tomasi_response(g, s.detector_params), s.detector_params), None, 0),
    Algorithm.FAST: lambda g, s: (fast_detect(g, s.detector_params), None, 0),
    Algorithm.BRIEF: _run_brief,
    Algorithm.ORB: _run_orb,
    Algorithm.SURF: _run_surf,
    Algorithm.SIFT: _run_sift,
}  # fmt: skip


def execute_task(task: Task, img: PixelImage, spec: JobSpec) -> TaskResult:
    """Run the job's pipeline on one decoded image.

    Keypoints come back in canonical order (response descending, then y,
    then x; ties keep pipeline order) with descriptors permuted alongside.
    """
    start = time.perf_counter_ns()
    gray = to_grayscale(img)
    kps, descs, dropped = PIPELINES[spec.algorithm](gray, spec)
    order = sorted(range(len(kps)), key=lambda i: (-kps[i].response, kps[i].y, kps[i].x))
    kps = tuple(kps[i] for i in order)
    if descs is not None:
        descs = descs[order]
    elapsed = (time.perf_counter_ns() - start) // 1000
    return TaskResult(task.entry_index, kps, descs, dropped, elapsed)


def run_entry(task: Task, payload: bytes, fmt, spec: JobSpec) -> TaskResult:
    """Decode and execute; any failure becomes an error result for the entry."""
    start = time.perf_counter_ns()
    try:
        img = decode_image(payload, fmt)
    except DifetError as exc:
        elapsed = (time.perf_counter_ns() - start) // 1000
        return TaskResult(task.entry_index, elapsed_micros=elapsed, error=f"image decode failed: {exc}")
    try:
        return execute_task(task, img, spec)
    except DifetError as exc:
        elapsed = (time.perf_counter_ns() - start) // 1000
        return TaskResult(task.entry_index, elapsed_micros=elapsed, error=f"{type(exc).__name__}: {exc}")


def plan_job(bundle: Bundle, spec: JobSpec) -> list[Task]:
    return [Task(e.index, e.index, 0) for e in bundle.entries]


class Runner(Protocol):
    def run(self, bundle: Bundle, spec: JobSpec, tasks: list[Task], parallelism: int) -> list[TaskResult]: ...


def _local_task(bundle_path: str, task: Task, spec: JobSpec) -> TaskResult:
    bundle = Bundle(bundle_path)
    entry = bundle.entries[task.entry_index]
    try:
        payload = bundle.payload(task.entry_index)
    except DifetError as exc:
        return TaskResult(task.entry_index, error=f"{type(exc).__name__}: {exc}")
    return run_entry(task, payload, entry.format, spec)


class LocalRunner:
    """Runs tasks on this machine with a process (default) or thread pool."""

    def __init__(self, mode: str = "process"):
        if mode not in ("process", "thread"):
            raise InvalidParameterError(f"unknown local runner mode {mode!r}")
        self.mode = mode

    def run(self, bundle: Bundle, spec: JobSpec, tasks: list[Task], parallelism: int) -> list[TaskResult]:
        if parallelism <= 1 or len(tasks) <= 1:
            return [_local_task(bundle.path, t, spec) for t in tasks]
        pool_cls = ProcessPoolExecutor if self.mode == "process" else ThreadPoolExecutor
        with pool_cls(max_workers=parallelism) as pool:
            futures = [pool.submit(_local_task, bundle.path, t, spec) for t in tasks]
            return [f.result() for f in futures]


def merge_results(results) -> list[TaskResult]:
    """Order by entry index; the first result per entry wins."""
    merged: dict[int, TaskResult] = {}
    for r in results:
        merged.setdefault(r.entry_index, r)
    return [merged[i] for i in sorted(merged)]


def summarize(results, algorithm, wall_seconds: float = 0.0, worker_count: int = 1) -> JobReport:
    report = JobReport(Algorithm.parse(algorithm), wall_seconds=wall_seconds, worker_count=worker_count)
    for r in results:
        if r.ok:
            report.entry_counts[r.entry_index] = len(r.keypoints)
        else:
            report.failed[r.entry_index] = r.error
    report.total_features = sum(report.entry_counts.values())
    return report


def run_job(
    bundle_path, spec: JobSpec, runner: Runner | None = None, parallelism: int = 1
) -> tuple[list[TaskResult], JobReport]:
    if parallelism < 1:
        raise InvalidParameterError(f"parallelism must be >= 1, got {parallelism}")
    bundle = Bundle(bundle_path)
    runner = runner or LocalRunner()
    tasks = plan_job(bundle, spec)
    start = time.perf_counter()
    try:
        raw = runner.run(bundle, spec, tasks, parallelism)
    except JobError:
        raise
    except Exception as exc:
        raise JobError(f"backend failure: {exc}") from exc
    wall = time.perf_counter() - start
    results = merge_results(raw)
    if [r.entry_index for r in results] != [t.entry_index for t in tasks]:
        raise JobError("backend returned an incomplete result set")
    for r in results:
        if not r.ok:
            log.warning("entry %d failed: %s", r.entry_index, r.error)
    return results, summarize(results, spec.algorithm, wall, parallelism)
