import pytest

from impactlab.estimator import BucketGrid, accumulate
from impactlab.simulator import SimConfig, simulate_panel


@pytest.fixture(scope="session")
def default_panel():
    """The 10^6-order default panel shared by the Monte Carlo tests."""
    return simulate_panel(SimConfig(n_orders=1_000_000, seed=0))


@pytest.fixture(scope="session")
def default_stats(default_panel):
    return accumulate(BucketGrid.log_spaced(), default_panel)


ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(key, passed, detail)."""
    def record(key: str, passed: bool, detail: str = ""):
        ACCEPTANCE[key] = (bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split(".")[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {key}  {detail}")
