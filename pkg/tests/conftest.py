import numpy as np
import pytest

from parapam.besov import build_partition
from parapam.spectral import TorusGrid, random_field


@pytest.fixture(scope="session")
def part16():
    return build_partition(TorusGrid(16))


@pytest.fixture(scope="session")
def part32():
    return build_partition(TorusGrid(32))


@pytest.fixture(scope="session")
def part64():
    return build_partition(TorusGrid(64))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rand(grid, rng, decay=1.0):
    return random_field(grid, rng, decay=decay)


def dft2(values):
    """O(N^4) forward transform, normalised like the package (coefficients = mean over the grid)."""
    n = values.shape[0]
    k = np.fft.fftfreq(n, 1.0 / n).round().astype(int)
    x = np.arange(n)
    e = np.exp(-2j * np.pi * np.outer(k, x) / n)  # e[k, x]
    out = np.zeros((n, n), complex)
    for a in range(n):
        for b in range(n):
            out[a, b] = np.sum(values * e[a][:, None] * e[b][None, :])
    return out / n**2


def _expand(c):
    """Coefficients on the symmetric lattice ``-N/2..N/2`` (Nyquist split in halves)."""
    n = c.shape[0]
    h = n // 2
    k = np.arange(-h, h + 1)
    idx = k % n
    out = c[np.ix_(idx, idx)].astype(complex)
    w = np.ones(n + 1)
    w[0] = w[-1] = 0.5
    return out * w[:, None] * w[None, :]


def conv_oracle(a, b):
    """Exact product of two band-limited coefficient arrays, projected back like the package does.

    Direct lattice convolution (no FFT); modes beyond ``N/2`` are dropped and
    ``+-N/2`` are folded into the stored Nyquist slot.
    """
    n = a.shape[0]
    h = n // 2
    ea, eb = _expand(a), _expand(b)
    size = 2 * n + 1
    full = np.zeros((size, size), complex)  # index s + n for s in [-n, n]
    for i in range(n + 1):
        for j in range(n + 1):
            if ea[i, j] != 0:
                full[i:i + n + 1, j:j + n + 1] += ea[i, j] * eb
    # keep -h..h, fold +h onto -h
    keep = full[n - h:n + h + 1, n - h:n + h + 1]
    keep = keep.copy()
    keep[0, :] += keep[-1, :]
    keep[:, 0] += keep[:, -1]
    keep = keep[:-1, :-1]
    k = np.arange(-h, h)
    out = np.zeros((n, n), complex)
    out[np.ix_(k % n, k % n)] = keep
    return out


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
