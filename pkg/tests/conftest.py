import pytest
from hypothesis import HealthCheck, settings

from pmelab.experiments import astar_profile
from pmelab.params import Params

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

P3 = Params(2, 3, 1, 1)
P6 = Params(2, 6, 1, 1)

_AC_LINES = []


@pytest.fixture(scope="session")
def ac_log():
    """Collects one summary line per acceptance criterion."""
    def log(tag, ok, detail):
        _AC_LINES.append(f"{tag} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return log


def pytest_terminal_summary(terminalreporter):
    if _AC_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_AC_LINES, key=lambda s: int(s.split()[0].split("-")[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def astar3():
    """(A*, critical trajectory, registry delta) for (m,p,sigma,N) = (2,3,1,1)."""
    return astar_profile(P3)


@pytest.fixture(scope="session")
def astar6():
    return astar_profile(P6)
