import time

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[dict]()


class Criterion:
    """Times one acceptance criterion and records a pass/fail line for the summary."""

    def __init__(self, table, number, title, limit):
        self.table = table
        self.number = number
        self.title = title
        self.limit = limit
        self.measured = ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        wall = time.perf_counter() - self.start
        slow = wall > self.limit
        ok = exc_type is None and not slow
        detail = self.measured
        if slow:
            detail = f"{detail}; over the {self.limit:g} s budget".lstrip("; ")
        if exc_type is not None and not detail:
            detail = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
        self.table[self.number] = (f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}: "
                                   f"{self.title} [{detail}] ({wall:.1f} s)")
        if exc_type is None and slow:
            raise AssertionError(f"criterion {self.number} took {wall:.1f} s "
                                 f"(limit {self.limit:g} s)")
        return False


@pytest.fixture
def criterion(request):
    table = request.config.stash.setdefault(_ACCEPTANCE, {})

    def make(number, title, limit):
        return Criterion(table, number, title, limit)
    return make


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(_ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(table):
        terminalreporter.write_line(table[number])
