"""
Shared pytest configuration.

Desk-scale acceptance runs take minutes each; they are marked ``slow`` and
only run with ``pytest --runslow``.
"""

import numpy as np
import pytest

from utils.logger import setup_logging


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale acceptance run (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True, scope="session")
def quiet_logging():
    """Console logging at WARNING so test output stays readable."""
    setup_logging(log_level="WARNING")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
