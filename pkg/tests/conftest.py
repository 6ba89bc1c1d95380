import numpy as np
import pytest

from glpn.graph import Graph

ACCEPTANCE_LINES = []


@pytest.fixture
def edge2():
    """Two nodes joined by one unit edge."""
    return np.array([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_adjacency(rng, n, p=0.3, weighted=False):
    upper = np.triu(rng.random((n, n)) < p, k=1).astype(float)
    if weighted:
        upper *= rng.uniform(0.1, 2.0, size=(n, n))
    return upper + upper.T


def path_graph(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return a


def full_graph(a, x):
    return Graph(a, x, np.ones_like(x))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
