import numpy as np
import pytest

from fairsurvey.population import GroupSpec, PopulationFrame, SyntheticSpec, generate_synthetic


@pytest.fixture
def tiny_frame():
    return PopulationFrame.from_records([("r1", "gA", 100.0, 2), ("r1", "gB", 50.0, 1)])


@pytest.fixture(scope="session")
def small_pop():
    spec = SyntheticSpec(
        (GroupSpec(6000, 50_000, 40_000, "A"), GroupSpec(2000, 30_000, 20_000, "B"), GroupSpec(1000, 20_000, 8_000, "C")),
        region_size=500,
        mixing=0.5,
        seed=11,
    )
    return generate_synthetic(spec, seed=1), generate_synthetic(spec, seed=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS, format_result
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(format_result(number))
