import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tidalflow.scenario import load_scenario  # noqa: E402


@pytest.fixture(scope="session")
def linkong():
    """The bundled scenario; contexts are cached on it, so treat it as read-only."""
    return load_scenario("linkong")


@pytest.fixture(scope="session")
def morning_analytic(linkong):
    return linkong.context("morning", "webster_analytic")


# acceptance criteria report one line each at the end of the run
def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
