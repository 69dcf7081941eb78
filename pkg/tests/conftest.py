"""
Shared pytest setup: repository root on sys.path and an isolated CELLDIR_HOME.
"""

import os
import sys
import tempfile
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))
os.environ["CELLDIR_HOME"] = tempfile.mkdtemp(prefix="celldir-test-")


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run end-to-end training tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training runs (minutes); enable with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_dataset():
    """40 synthetic 32x32 cells"""
    from modules.data_module import generate_dataset
    return generate_dataset(40, 32, seed=7)
