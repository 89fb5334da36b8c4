import numpy as np
import pytest

from distobs.graph import DirectedGraph
from distobs.plant import Plant

FIG2_EDGES = [(1, 2), (2, 3), (3, 1), (3, 5), (4, 7), (7, 4), (7, 5), (5, 6), (6, 5)]


def fig2_graph():
    return DirectedGraph(7, FIG2_EDGES)


def fig2_plant():
    A = np.diag([1.2, 0.8])
    H = [[[1, 0]], [[0, 1]], np.zeros((0, 2)), [[1, 1]], [[0, 1]], [[1, 0]], [[0, 1]]]
    return Plant(A, [np.array(h, dtype=float).reshape(-1, 2) for h in H])


@pytest.fixture
def fig2():
    return fig2_graph(), fig2_plant()


ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail):
    line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
