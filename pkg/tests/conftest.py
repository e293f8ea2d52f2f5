import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from taskforge.catalog import default_catalog

settings.register_profile(
    "default", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

FROZEN = Path(__file__).parent / "oracles" / "frozen.json"


@pytest.fixture(scope="session")
def frozen():
    return json.loads(FROZEN.read_text())


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()
