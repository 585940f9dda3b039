"""Scale-out benchmark: wall time and feature totals per (algorithm, workers)."""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass

from difet.bundle import Bundle
from difet.engine import Algorithm, JobReport, JobSpec, LocalRunner, run_job

CSV_HEADER = ("algorithm", "n_images", "workers", "wall_seconds", "total_features")


@dataclass(frozen=True)
class BenchRow:
    algorithm: str
    n_images: int
    workers: int
    wall_seconds: float
    total_features: int

    @classmethod
    def from_report(cls, report: JobReport, wall_seconds: float | None = None) -> BenchRow:
        wall = report.wall_seconds if wall_seconds is None else wall_seconds
        return cls(report.algorithm.value, report.n_images, report.worker_count, wall, report.total_features)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow((r.algorithm, r.n_images, r.workers, f"{r.wall_seconds:.6f}", r.total_features))
    return buf.getvalue()


def rows_from_csv(text: str) -> list[BenchRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header!r}")
    return [BenchRow(a, int(n), int(w), float(s), int(t)) for a, n, w, s, t in reader]


def markdown_table(rows) -> str:
    """Two tables, one for times and one for counts, algorithms down, worker counts across."""
    rows = list(rows)
    workers = sorted({r.workers for r in rows})
    algs = list(dict.fromkeys(r.algorithm for r in rows))
    cell = {(r.algorithm, r.workers): r for r in rows}
    n_images = sorted({r.n_images for r in rows})
    n_label = ",".join(str(n) for n in n_images)

    def table(title, fmt):
        head = f"| {title} | " + " | ".join(f"{w} worker{'s' if w != 1 else ''}" for w in workers) + " |"
        sep = "|---|" + "---|" * len(workers)
        body = []
        for a in algs:
            vals = [fmt(cell[a, w]) if (a, w) in cell else "" for w in workers]
            body.append(f"| {a} | " + " | ".join(vals) + " |")
        return "\n".join([head, sep, *body])

    return (
        f"Running time in seconds (N={n_label})\n\n"
        + table("Algorithm", lambda r: f"{r.wall_seconds:.3f}")
        + f"\n\nNumber of points (N={n_label})\n\n"
        + table("Algorithm", lambda r: str(r.total_features))
        + "\n"
    )


def run_bench(bundle_path, algorithms, workers_list, repeat: int = 1, runner_factory=None, spec_factory=None):
    """Run every (algorithm, workers) pair ``repeat`` times; wall time is the median.

    ``runner_factory(workers)`` builds the backend (a process-pool
    :class:`LocalRunner` by default). ``spec_factory(algorithm)`` builds the
    job spec.
    """
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    runner_factory = runner_factory or (lambda workers: LocalRunner())
    spec_factory = spec_factory or (lambda alg: JobSpec.for_bundle(bundle_path, alg))
    n_images = len(Bundle(bundle_path))
    rows = []
    for alg in algorithms:
        alg = Algorithm.parse(alg)
        spec = spec_factory(alg)
        for workers in workers_list:
            times, totals = [], set()
            for _ in range(repeat):
                _, report = run_job(bundle_path, spec, runner_factory(workers), workers)
                times.append(report.wall_seconds)
                totals.add(report.total_features)
            if len(totals) != 1:
                raise RuntimeError(f"{alg.value}: feature totals differ between repeats: {sorted(totals)}")
            rows.append(BenchRow(alg.value, n_images, workers, statistics.median(times), totals.pop()))
    return rows


def speedup(rows, algorithm: str, base_workers: int = 1) -> dict[int, float]:
    """``t(base) / t(w)`` for each worker count of one algorithm."""
    mine = {r.workers: r.wall_seconds for r in rows if r.algorithm == algorithm}
    base = mine[base_workers]
    return {w: base / t for w, t in sorted(mine.items()) if t > 0}


__all__ = ["BenchRow", "CSV_HEADER", "markdown_table", "rows_from_csv", "rows_to_csv", "run_bench", "speedup"]
