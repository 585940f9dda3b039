"""
Same job, three ways
====================

Runs one extraction job serially, on a local process pool, and through
a TCP coordinator with two worker processes, then checks the keypoint
files agree byte for byte. Finishes with a small benchmark table.
"""

import sys
import tempfile
from pathlib import Path

from difet import JobSpec, LocalRunner, format_result, run_job
from difet.bench import markdown_table, run_bench
from difet.bundle import bundle_create
from difet.netproto import RemoteRunner
from difet.synthetic import generate_corpus

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="difet_demo_"))
paths = generate_corpus(work / "imgs", 8, (256, 256), seed=3)
bundle = work / "corpus.fib"
bundle_create([(p.name, p.read_bytes()) for p in paths], bundle)

# %%
spec = JobSpec.for_bundle(bundle, "orb")
runs = {
    "serial": run_job(bundle, spec, LocalRunner(), 1),
    "pool of 4": run_job(bundle, spec, LocalRunner(), 4),
    "coordinator + 2 workers": run_job(bundle, spec, RemoteRunner(spawn_workers=2, timeout=120), 2),
}
texts = {name: [format_result(r, "orb") for r in res] for name, (res, _) in runs.items()}
for name, (_, report) in runs.items():
    same = texts[name] == texts["serial"]
    print(f"{name:>24}: {report.total_features} features, {report.wall_seconds:.2f} s, identical={same}")

# %%
# Wall time is the median of three runs per cell.
rows = run_bench(bundle, ["harris", "orb"], [1, 2], repeat=3)
print()
print(markdown_table(rows))
