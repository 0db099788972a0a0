import numpy as np
import pytest

from ufpfts.synthetic import desk_truth, simulate_dataset


@pytest.fixture(scope="session")
def small_truth():
    return desk_truth(seed=11, n_runs=4, n_bins=12, K=5, L=4)


@pytest.fixture(scope="session")
def small_data(small_truth):
    ds, latent = simulate_dataset(small_truth)
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
