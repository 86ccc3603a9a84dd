import os
import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repo", deadline=None, max_examples=25, derandomize=True)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _no_env_budget(monkeypatch):
    monkeypatch.delenv("GPHL_MEM_BUDGET_BYTES", raising=False)


ACCEPTANCE_LINES = []


@pytest.fixture
def accept():
    """report(n, title, ok, detail): record one acceptance line, print it, and assert."""

    def report(n, title, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
