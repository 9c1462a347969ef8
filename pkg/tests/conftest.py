import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bitetransfer.headmodel import default_template
from bitetransfer.perception import default_rig

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(scope="session")
def template():
    return default_template()


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def report(criterion: int, ok: bool, detail: str = "") -> bool:
    """Record and print one acceptance verdict line."""
    line = f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
