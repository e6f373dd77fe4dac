import sys

import numpy as np
import pytest

from fasa import detect
from fasa.traffic import ScenarioConfig, run_scenario


@pytest.fixture(scope="session")
def default_model():
    return detect.load_default_model()


@pytest.fixture(scope="session")
def scenario(default_model):
    """The default 140 s scenario with the shipped model in the loop (about 4 s)."""
    controller = detect.Controller(default_model)
    result = run_scenario(ScenarioConfig(), detector=controller)
    return result


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(results):
        terminalreporter.write_line(f"criterion {number}: {status:<7} {title}: {detail}")
