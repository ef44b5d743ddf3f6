import pytest

from regalign.evaluation import random_cloud
from support import ACCEPTANCE_LINES, toy_problem


@pytest.fixture
def toy():
    return toy_problem()


@pytest.fixture(scope="session")
def cloud():
    return random_cloud(2000, 3, seed=1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
