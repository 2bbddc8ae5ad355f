import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to Python path
sys.path.insert(0, str(Path(__file__).parent.parent))

from setonet.benchmarks import get_card
from setonet.config import build_train_config
from setonet.database import Database
from setonet.metrics_manager import MetricsManager
from setonet.run_manager import RunManager


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long training runs, enabled with SETONET_RUN_SLOW=1"
    )


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SETONET_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SETONET_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def db():
    """Create a temporary in-memory database for testing"""
    database = Database(":memory:")
    database.init_db()
    yield database
    if database.conn:
        database.conn.close()


@pytest.fixture
def run_manager(db):
    """Create a RunManager instance"""
    return RunManager(db)


@pytest.fixture
def metrics_manager(db):
    """Create a MetricsManager instance"""
    return MetricsManager(db)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def derivative_config():
    """A tiny derivative run: few steps, small test set, float64"""
    return build_train_config(
        "derivative",
        "key",
        "fixed",
        overrides={
            "total_steps": 6,
            "batch_size": 4,
            "eval_every": 3,
            "milestones": [2, 4],
            "seeds": [0],
            "dtype": "float64",
            "card_overrides.test_size": 8,
            "card_overrides.M": 20,
            "card_overrides.N_q": 16,
        },
    )


@pytest.fixture
def small_darcy_card():
    """Darcy card on a coarse grid so generation stays fast"""
    return get_card(
        "darcy1d",
        {
            "params.grid_points": 101,
            "M": 25,
            "N_q": 20,
            "train_size": 6,
            "test_size": 4,
        },
    )
