import numpy as np
import pytest

from kpipoison.emulator import EmulationConfig, build_topology, run


@pytest.fixture(scope="session")
def small_config():
    return EmulationConfig(n_ues=6, duration_s=400, slice_split=(3, 3), n_gnbs=1, seed=3)


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return run(small_config)


@pytest.fixture(scope="session")
def small_topology(small_config):
    return build_topology(small_config)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}")
