import numpy as np
import pytest
import scipy.sparse as sp

from signbal.graph import SignedDiGraph


def random_signed(n, p=0.1, seed=0, neg=0.4):
    """Random signed digraph without self-loops, as a csr matrix."""
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < p
    np.fill_diagonal(mask, False)
    signs = np.where(rng.random((n, n)) < neg, -1.0, 1.0)
    return sp.csr_matrix(mask * signs)


def cycle3(signs=(1, 1, 1)):
    """Directed 3-cycle 0->1->2->0 with the given signs."""
    return SignedDiGraph.from_edges(3, [(0, 1, signs[0]), (1, 2, signs[1]), (2, 0, signs[2])])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE = []


@pytest.fixture
def acceptance_log():
    """Collect one summary line per acceptance criterion."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
