import numpy as np
import pytest

from coreperiphery.model import CommunityConfig
from coreperiphery.solver import solve_equilibrium


@pytest.fixture(scope="session")
def desk():
    return CommunityConfig()


@pytest.fixture(scope="session")
def desk_result(desk):
    return solve_equilibrium(desk)


@pytest.fixture(scope="session")
def tiny():
    """Three agents with budgets scaled down from the desk setup."""
    return CommunityConfig(num_periphery=3, budget_core=15.0, budget_periphery=6.0)


@pytest.fixture(scope="session")
def tiny_result(tiny):
    return solve_equilibrium(tiny)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --------------------------------------------------------------------------
# one summary line per acceptance criterion

_criteria = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(f"{k}={v}" for k, v in rep.user_properties)
        label = marker.args[0]
        suffix = item.callspec.id if hasattr(item, "callspec") else ""
        _criteria.append((label, suffix, "PASS" if rep.passed else "FAIL", detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, suffix, status, detail in _criteria:
        name = f"{label} [{suffix}]" if suffix else label
        terminalreporter.write_line(f"{status}  {name}  {detail}")
