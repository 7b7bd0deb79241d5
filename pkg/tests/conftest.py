import numpy as np
import pytest

from multiplex_lsm.netdata import LatentFactors


def random_orthogonal(rng, k):
    if k == 0:
        return np.zeros((0, 0))
    Q, R = np.linalg.qr(rng.standard_normal((k, k)))
    return Q * np.sign(np.diag(R))


def random_factors(rng, n, k, dims, scale=0.5):
    Z = scale * rng.standard_normal((n, k))
    W = tuple(scale * rng.standard_normal((n, kt)) for kt in dims)
    return LatentFactors(Z, W)


def symmetric_data(rng, fam, theta):
    """Sample a symmetric layer stack from natural parameters ``theta``."""
    A = np.zeros_like(theta)
    n = theta.shape[-1]
    iu = np.triu_indices(n)
    for t in range(theta.shape[0]):
        v = fam.sample(theta[t][iu], rng)
        A[t][iu] = v
        A[t].T[iu] = v
    return A


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
