import numpy as np
import pytest

from stepwise.synth import SynthConfig, generate_cohort


@pytest.fixture(scope="session")
def small_cohort():
    return generate_cohort(SynthConfig(n_participants=40, seed=3))


@pytest.fixture(scope="session")
def small_series(small_cohort):
    from stepwise.cohort import impute_cohort
    return impute_cohort(small_cohort.series(6))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(test_acceptance.RESULTS[n])
