import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from difet.bundle import Bundle, bundle_create  # noqa: E402
from difet.netpbm import encode_netpbm  # noqa: E402
from difet.synthetic import textured_image  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_bundle(path, count, size=(96, 80), seed=7, gray_every=0):
    """Bundle of seeded textured images; every ``gray_every``-th one is PGM."""
    sources = []
    for i in range(count):
        channels = 1 if gray_every and i % gray_every == 0 else 3
        img = textured_image(size[0], size[1], seed, i, channels)
        ext = "pgm" if channels == 1 else "ppm"
        sources.append((f"img_{i:03d}.{ext}", encode_netpbm(img)))
    bundle_create(sources, path)
    return path, sources


@pytest.fixture
def bundle_factory(tmp_path):
    counter = iter(range(1000))

    def factory(count, **kwargs):
        return make_bundle(tmp_path / f"b{next(counter)}.fib", count, **kwargs)

    return factory


def corrupt_entry(path, index, fill=b"\xff"):
    """Overwrite one entry's payload in place so it no longer decodes."""
    entry = Bundle(path).entries[index]
    with open(path, "r+b") as fh:
        fh.seek(entry.payload_offset)
        fh.write(b"garbage!" + fill * (entry.payload_length - 8))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
