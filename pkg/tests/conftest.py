import numpy as np
import pytest

from bilateral_inception.superpixel import Partition


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_partition(rng, height, width, m):
    """Random partition with exactly ``m`` non-empty segments (not
    necessarily connected)."""
    labels = rng.integers(0, m, size=(height, width))
    labels.ravel()[:m] = rng.permutation(m)
    return Partition(labels)


def random_image(rng, height, width):
    return rng.random((height, width, 3))


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one summary line per acceptance criterion."""

    def record(number, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
