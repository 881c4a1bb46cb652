import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from kitchenplan.env import load_layout, reset  # noqa: E402
from kitchenplan.text_bridge import fixture_manual  # noqa: E402


@pytest.fixture(scope="session")
def layout():
    return load_layout("forced_coordination_v1")


@pytest.fixture
def start(layout):
    return reset(layout, 0)


@pytest.fixture(scope="session")
def manual():
    return fixture_manual()


@pytest.fixture(scope="session")
def params():
    from kitchenplan.orchestrator import RunConfig, load_params
    return load_params(RunConfig())
