import numpy as np
import pytest

from curvedbj.mesh import InclusionSpec
from curvedbj.transform import CurveSpec


@pytest.fixture(scope="session")
def flat():
    return CurveSpec(1.0)


@pytest.fixture(scope="session")
def wavy():
    return CurveSpec(1.0, (), (0.2,))


@pytest.fixture(scope="session")
def circle():
    return InclusionSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the flag."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
