import time

import pytest

from swaybench.scoring import surrogate_reference

ACCEPTANCE_LINES = []

SURROGATE_SEED = 2024
SURROGATE_SUBJECTS = 38


@pytest.fixture(scope="session")
def surrogate():
    """(reference, seconds to build it)."""
    start = time.perf_counter()
    ref = surrogate_reference(SURROGATE_SUBJECTS, SURROGATE_SEED)
    return ref, time.perf_counter() - start


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
