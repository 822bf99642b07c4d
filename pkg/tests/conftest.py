import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evalrl.envs import GridWorldSpec, tabularize  # noqa: E402

GRID = GridWorldSpec(4, 4, (0, 0), (3, 3), -0.5)


@pytest.fixture
def grid_spec():
    return GRID


@pytest.fixture
def grid_mdp():
    return tabularize(GRID)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting: one pass/fail line per criterion in the terminal summary

_CRITERIA = pytest.StashKey[dict]()
_DETAIL = pytest.StashKey[list]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config.stash[_CRITERIA] = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the current criterion."""
    notes = []
    request.node.stash[_DETAIL] = notes
    return notes.append


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and (report.when == "call" or report.failed):
        notes = item.stash.get(_DETAIL, [])
        item.config.stash[_CRITERIA][mark.args[0]] = (report.passed, "; ".join(notes))
    return report


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, note = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {note}")
