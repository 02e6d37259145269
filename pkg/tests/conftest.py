import numpy as np
import pytest


def central_diff_grad(f, x, h=1e-5):
    """Coordinate-wise central differences; exact up to rounding for quadratics."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_rel_error(f, grad, x, h=1e-5):
    g = grad(x)
    fd = central_diff_grad(f, x, h)
    return np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1e-12)


def random_orthonormal(rng, dim, size):
    Q, _ = np.linalg.qr(rng.standard_normal((dim, size)))
    return Q


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
