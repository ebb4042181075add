import pytest

from abssplit.domain import Ad, SplitConfig


@pytest.fixture
def config():
    return SplitConfig(alpha=0.6, seed=42)


@pytest.fixture
def small_ads():
    return [Ad(f"ad{i}", 1000 * (i + 1), {"country": "US" if i % 2 else "GB"}) for i in range(6)]


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
