import numpy as np
import pytest

from bahash.data import FeatureMatrix, normalize
from bahash.synth import gaussian_blobs

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def blobs_small():
    return normalize(gaussian_blobs(16, 400, clusters=6, seed=3))


@pytest.fixture
def accept():
    """Record one PASS/FAIL line for the acceptance summary, then assert."""
    def record(number, name, passed, detail="", hard=True):
        tag = "PASS" if passed else ("FAIL" if hard else "WARN")
        ACCEPTANCE_LINES.append(f"[{tag}] criterion {number:>2}: {name} :: {detail}")
        print(ACCEPTANCE_LINES[-1])
        if hard:
            assert passed, f"criterion {number} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def random_features(rng, D, N):
    return FeatureMatrix(rng.normal(size=(D, N)))
