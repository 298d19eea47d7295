import numpy as np
import pytest
from hypothesis import settings

from adptrack.config import ExperimentConfig
from adptrack import experiments

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

# pass/fail lines collected by the acceptance module
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def default_cfg():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def balanced_data(default_cfg):
    return experiments.collect(default_cfg, d=0.0)


@pytest.fixture(scope="session")
def trained(default_cfg, balanced_data):
    return experiments.train_controller(default_cfg, data=balanced_data)


@pytest.fixture(scope="session")
def model(default_cfg):
    return experiments.model_controller(default_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
