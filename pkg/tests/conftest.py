import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scarpy import Dataset  # noqa: E402

ACCEPTANCE: dict = {}


@pytest.fixture
def example2():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    y = np.array([0.0, 0.0, 0.0, 1.0])
    return Dataset(X, y)


@pytest.fixture
def record():
    """Record one acceptance line: ``record(tag, passed, detail)``."""
    def _record(tag, passed, detail=""):
        ACCEPTANCE[tag] = (bool(passed), detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag in sorted(ACCEPTANCE, key=lambda t: int(t.split()[0][1:])):
        passed, detail = ACCEPTANCE[tag]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {tag}  {detail}")
