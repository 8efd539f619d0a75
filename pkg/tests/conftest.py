import numpy as np
import pytest

from svdrecycle.sparsela import CsrMatrix


def random_system(rng, n=30, shift=3.0):
    """Well-conditioned nonsymmetric dense matrix, its CSR form and a solution."""
    A = shift * np.eye(n) + rng.standard_normal((n, n)) / np.sqrt(n)
    x = rng.standard_normal(n)
    return A, CsrMatrix.from_dense(A), x


def random_sparse(rng, n, fill=0.5):
    mask = rng.random((n, n)) < fill
    return np.where(mask, rng.standard_normal((n, n)), 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Store and print one acceptance line."""
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
