import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nembed.graph import Graph  # noqa: E402
from oracles import random_edges  # noqa: E402


@pytest.fixture
def triangle():
    return Graph.from_edges([(0, 1), (1, 2), (2, 0)], 3, symmetrize=True)


def make_graph(n, m, seed, symmetrize=True):
    return Graph.from_edges(random_edges(n, m, seed), n, symmetrize=symmetrize)


@pytest.fixture
def small_graph():
    return make_graph(200, 1200, 7)


# acceptance criteria append "criterion N: PASS|FAIL  detail" lines here
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("ab")), s)):
            terminalreporter.write_line(line)
