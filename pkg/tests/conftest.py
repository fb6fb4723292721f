import numpy as np
import pytest

from l20mc.obs import ObservationSet


def random_obs(rng, n, m, density=0.5, rank=None, noise=0.0):
    """Random observation set plus the dense matrix it was drawn from and its mask."""
    if rank is None:
        full = rng.standard_normal((n, m))
    else:
        full = rng.standard_normal((n, rank)) @ rng.standard_normal((m, rank)).T
    full = full + noise * rng.standard_normal((n, m))
    mask = rng.random((n, m)) < density
    mask.flat[rng.integers(n * m)] = True
    rows, cols = np.nonzero(mask)
    return ObservationSet.from_arrays(n, m, rows, cols, full[rows, cols]), full, mask


def dense_loss(U, V, full, mask):
    diff = np.where(mask, U @ V.T - full, 0.0)
    return 0.5 * float(np.sum(diff**2))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_CRITERIA = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number, title, ok, detail):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
