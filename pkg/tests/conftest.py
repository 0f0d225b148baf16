import os

import pytest
from hypothesis import HealthCheck, settings

from shared import ACCEPTANCE_LINES, run_suite

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def suite_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("suite-first")


@pytest.fixture(scope="session")
def suite(suite_dir):
    """Degradation table, ordering table, ablation and probe runs on seeds 0-2."""
    return run_suite(suite_dir)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
