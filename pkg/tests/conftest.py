import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "sfb", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "sfb"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def seasonal_values():
    """Ten years of a clean seasonal pattern with mild trend and noise."""
    t = np.arange(120)
    r = np.random.default_rng(7)
    return 1000 + 2.0 * t + 300 * np.sin(2 * np.pi * t / 12) + r.normal(0, 20, t.size)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
