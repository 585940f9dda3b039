"""Command-line entry point: ``difet <command> ...``.

Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from difet.bench import BenchRow, markdown_table, rows_to_csv, run_bench
from difet.bundle import Bundle, bundle_create
from difet.describe import DescriptorParams
from difet.detect import DetectorParams
from difet.engine import Algorithm, JobReport, JobSpec, LocalRunner, default_detector_params, run_job, summarize
from difet.errors import DifetError, InvalidParameterError
from difet.featio import render_overlay, write_result
from difet.netpbm import ImageFormat, write_netpbm
from difet.synthetic import generate_corpus

log = logging.getLogger("difet")

IMAGE_SUFFIXES = {".pgm", ".ppm", ".png"}


class UsageError(Exception):
    pass


# -- parameters --


def _coerce(name: str, text: str, default):
    text = text.strip()
    if name == "max_corners":
        return None if text.lower() in ("", "none") else int(text)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    return float(text)


def parse_params_text(text: str, source: str = "<params>") -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def build_params(alg: Algorithm, overrides: dict[str, str]) -> tuple[DetectorParams, DescriptorParams]:
    det = default_detector_params(alg)
    desc = DescriptorParams()
    det_fields = {f.name for f in dataclasses.fields(DetectorParams)}
    desc_fields = {f.name for f in dataclasses.fields(DescriptorParams)}
    det_kw, desc_kw = {}, {}
    for key, value in overrides.items():
        if key in det_fields:
            target, base = det_kw, det
        elif key in desc_fields:
            target, base = desc_kw, desc
        else:
            raise UsageError(f"unknown parameter {key!r}")
        try:
            target[key] = _coerce(key, value, getattr(base, key))
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    try:
        return dataclasses.replace(det, **det_kw), dataclasses.replace(desc, **desc_kw)
    except InvalidParameterError as exc:
        raise UsageError(str(exc)) from None


def params_reference() -> str:
    """Markdown page listing every tunable and its default per algorithm."""
    lines = ["# difet parameters", "", "Set these in a `--params-file` (one `key = value` per line) or with `--set key=value`.", ""]
    lines += ["## Detector", "", "| key | " + " | ".join(a.value for a in Algorithm) + " |"]
    lines.append("|---|" + "---|" * len(Algorithm))
    for f in dataclasses.fields(DetectorParams):
        vals = [repr(getattr(default_detector_params(a), f.name)) for a in Algorithm]
        lines.append(f"| {f.name} | " + " | ".join(vals) + " |")
    lines += ["", "## Descriptor", "", "| key | default |", "|---|---|"]
    for f in dataclasses.fields(DescriptorParams):
        lines.append(f"| {f.name} | {getattr(DescriptorParams(), f.name)!r} |")
    return "\n".join(lines) + "\n"


def _spec_from_args(args) -> JobSpec:
    overrides = {}
    if args.params_file:
        path = Path(args.params_file)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise UsageError(f"cannot read params file: {exc}") from None
        overrides.update(parse_params_text(text, str(path)))
    for item in args.set or ():
        overrides.update(parse_params_text(item, "--set"))
    det, desc = build_params(args.alg, overrides)
    return JobSpec.for_bundle(args.bundle, args.alg, det, desc, args.out)


def write_outputs(results, report: JobReport, spec: JobSpec, out_dir, overlay_dir=None, bundle_path=None) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [write_result(r, spec, out) for r in results if r.ok]
    if overlay_dir is not None:
        bundle = Bundle(bundle_path)
        Path(overlay_dir).mkdir(parents=True, exist_ok=True)
        for r in results:
            if r.ok:
                img = render_overlay(bundle.fetch(r.entry_index), r.keypoints)
                write_netpbm(Path(overlay_dir) / f"{r.entry_index:06d}.ppm", img)
    (out / "report.csv").write_text(rows_to_csv([BenchRow.from_report(report)]), encoding="utf-8", newline="\n")
    for entry, reason in sorted(report.failed.items()):
        print(f"difet: entry {entry} failed: {reason}", file=sys.stderr)
    return paths


# -- commands --


def cmd_bundle_create(args) -> int:
    src = Path(args.directory)
    if not src.is_dir():
        raise UsageError(f"not a directory: {src}")
    files = sorted(p for p in src.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    header = bundle_create(((p.name, p.read_bytes()) for p in files), args.output)
    print(f"wrote {args.output} with {header.entry_count} entries")
    return 0


def cmd_bundle_list(args) -> int:
    for e in Bundle(args.bundle).entries:
        print(f"{e.index} {e.name} {e.width}x{e.height} {e.channels} {ImageFormat(e.format).name} {e.payload_length}")
    return 0


def cmd_bundle_fetch(args) -> int:
    bundle = Bundle(args.bundle)
    if not 0 <= args.index < len(bundle):
        raise UsageError(f"entry index {args.index} out of range (bundle has {len(bundle)} entries)")
    bundle.fetch(args.index)  # validates the payload against the index
    Path(args.output).write_bytes(bundle.payload(args.index))
    return 0


def cmd_extract(args) -> int:
    spec = _spec_from_args(args)
    results, report = run_job(args.bundle, spec, LocalRunner(args.backend), args.parallelism)
    write_outputs(results, report, spec, args.out, args.overlay, args.bundle)
    print(f"{report.algorithm.value}: {report.total_features} features from {report.n_images} images "
          f"in {report.wall_seconds:.3f} s")  # fmt: skip
    return 0


def cmd_coordinator(args) -> int:
    import time

    from difet.netproto.server import Coordinator

    spec = _spec_from_args(args)
    try:
        coord = Coordinator(
            args.bundle, spec, host=args.host, port=args.port, min_workers=args.expected_workers,
            task_deadline=args.task_deadline,
        )  # fmt: skip
    except OSError as exc:
        raise DifetError(f"cannot listen on {args.host}:{args.port}: {exc}") from None
    print(f"coordinator listening on {coord.address[0]}:{coord.port}", flush=True)
    start = time.perf_counter()
    results = coord.serve()
    wall = time.perf_counter() - start
    report = summarize(results, spec.algorithm, wall, max(coord.state.joined_total, 1))
    write_outputs(results, report, spec, args.out, args.overlay, args.bundle)
    return 0


def cmd_worker(args) -> int:
    from difet.netproto.server import connect, worker_loop

    try:
        sock = connect(args.connect, retries=args.retries)
    except OSError as exc:
        print(f"difet: error: {exc}", file=sys.stderr)
        return 1
    return worker_loop(sock, protocol_version=args.protocol_version)


def cmd_bench(args) -> int:
    rows = run_bench(args.bundle, args.algs, args.workers_list, args.repeat,
                     runner_factory=lambda w: LocalRunner(args.backend))  # fmt: skip
    text = rows_to_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    print(f"# wall_seconds is the median of {args.repeat} run{'s' if args.repeat != 1 else ''}")
    table = markdown_table(rows)
    if args.markdown:
        Path(args.markdown).write_text(table, encoding="utf-8")
    else:
        print()
        sys.stdout.write(table)
    return 0


def cmd_gen(args) -> int:
    paths = generate_corpus(args.out, args.count, args.size, args.seed, 1 if args.gray else 3)
    print(f"wrote {len(paths)} images to {args.out}")
    return 0


def cmd_params(args) -> int:
    sys.stdout.write(params_reference())
    return 0


# -- argument parsing --


def _alg(text: str) -> Algorithm:
    try:
        return Algorithm.parse(text)
    except InvalidParameterError:
        raise argparse.ArgumentTypeError(
            f"unknown algorithm {text!r} (choose from {', '.join(a.value for a in Algorithm)})"
        ) from None


def _alg_list(text: str) -> list[Algorithm]:
    return [_alg(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("worker counts must be >= 1")
    return values


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _size(text: str) -> tuple[int, int]:
    w, sep, h = text.lower().partition("x")
    try:
        size = (int(w), int(h))
    except ValueError:
        size = None
    if not sep or size is None or min(size) < 1:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}")
    return size


def _add_job_args(p, out_required=True):
    p.add_argument("bundle")
    p.add_argument("--alg", type=_alg, required=True, help="harris, shi-tomasi, fast, brief, orb, surf or sift")
    p.add_argument("--params-file", help="key=value file (see `difet params`)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="parameter override; repeatable")
    p.add_argument("--out", required=out_required, help="output directory for .kp files and report.csv")
    p.add_argument("--overlay", metavar="DIR", help="also write each image with its keypoints marked, as PPM")


def build_parser() -> argparse.ArgumentParser:
    from difet.netproto.server import default_port

    parser = argparse.ArgumentParser(prog="difet", description="Distributed image feature extraction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    bundle = sub.add_parser("bundle", help="create, list or fetch from image bundles")
    bsub = bundle.add_subparsers(dest="bundle_command", required=True)
    p = bsub.add_parser("create", help="pack a directory of PGM/PPM/PNG files")
    p.add_argument("directory")
    p.add_argument("output")
    p.set_defaults(func=cmd_bundle_create)
    p = bsub.add_parser("list", help="print one line per entry")
    p.add_argument("bundle")
    p.set_defaults(func=cmd_bundle_list)
    p = bsub.add_parser("fetch", help="write one entry's encoded bytes to a file")
    p.add_argument("bundle")
    p.add_argument("index", type=int)
    p.add_argument("output")
    p.set_defaults(func=cmd_bundle_fetch)

    p = sub.add_parser("extract", help="run a job on this machine")
    _add_job_args(p)
    p.add_argument("--parallelism", type=_positive, default=1)
    p.add_argument("--backend", choices=("process", "thread"), default="process")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("coordinator", help="serve a job to remote workers")
    _add_job_args(p)
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=default_port())
    p.add_argument("--expected-workers", type=_positive, default=1,
                   help="hold assignments until this many workers have joined")  # fmt: skip
    p.add_argument("--task-deadline", type=float, default=30.0)
    p.set_defaults(func=cmd_coordinator)

    p = sub.add_parser("worker", help="connect to a coordinator and run tasks")
    p.add_argument("--connect", default=f"127.0.0.1:{default_port()}", metavar="HOST:PORT")
    p.add_argument("--retries", type=_positive, default=50)
    p.add_argument("--protocol-version", type=int, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_worker)

    p = sub.add_parser("bench", help="time jobs across worker counts")
    p.add_argument("bundle")
    p.add_argument("--algs", type=_alg_list, required=True)
    p.add_argument("--workers-list", type=_int_list, default=[1, 2, 4])
    p.add_argument("--repeat", type=_positive, default=3)
    p.add_argument("--backend", choices=("process", "thread"), default="process")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--markdown", help="Markdown table path (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--size", type=_size, default=(1024, 1024), metavar="WxH")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gray", action="store_true", help="write PGM instead of PPM")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("params", help="print the parameter reference")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "protocol_version", 0) is None:
        from difet.netproto.messages import PROTOCOL_VERSION

        args.protocol_version = PROTOCOL_VERSION
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"difet: error: {exc}", file=sys.stderr)
        return 2
    except (DifetError, OSError) as exc:
        print(f"difet: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
