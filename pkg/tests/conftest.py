import numpy as np
import pytest

from cvvi import checks
from cvvi.datasets import resolve_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def blobs():
    return resolve_dataset("synthetic:blobs2d")


@pytest.fixture(scope="session")
def australian():
    return resolve_dataset("synthetic:australian_like")


@pytest.fixture
def small_ds():
    return checks.random_dataset(np.random.default_rng(7), N=50, D=5)


@pytest.fixture
def params5():
    return checks.random_params(np.random.default_rng(3), 5)


def zscores(x):
    """|mean|/SE per coordinate over axis 0."""
    return checks.mean_z(np.asarray(x).reshape(len(x), -1))


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def _report(label, ok, detail):
        line = f"ACCEPTANCE {label}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split(":")[0]):
            terminalreporter.write_line(line)
