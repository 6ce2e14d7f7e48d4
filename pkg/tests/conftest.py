import numpy as np
import pytest

from photonic_bss.signals import mix, symmetric_mixing

from .helpers import two_sources


@pytest.fixture(scope="session")
def sources():
    return two_sources()


@pytest.fixture(scope="session")
def scenario_08(sources):
    return mix(sources, symmetric_mixing(0.8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance plumbing -----------------------------------------------------

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ill_condition_record():
    """Full-size ill-conditioned sweep, shared by the acceptance and property checks."""
    from photonic_bss.harness import ExperimentConfig, run_experiment
    return run_experiment(ExperimentConfig("ill_condition_sweep"))
