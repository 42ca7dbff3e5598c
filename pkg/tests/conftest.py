from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

# Keep simulated critical values in a repository-local cache so repeated
# runs reuse them.  Tests that exercise the cache itself use tmp_path.
os.environ.setdefault(
    "COUNTBREAK_CACHE_DIR", str(Path(__file__).resolve().parent.parent / ".critval_cache")
)

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion for the terminal summary."""

    def record(name: str, passed: bool, detail: str) -> None:
        line = f"{name}: {'PASS' if passed else 'FAIL'} | {detail}"
        print(line)
        _ACCEPTANCE.append((name, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{name}: {'PASS' if passed else 'FAIL'} | {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
