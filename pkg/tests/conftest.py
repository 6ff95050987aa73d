import numpy as np
import pytest

from multilevel_readout.params import SystemParams, get_code


@pytest.fixture
def params():
    return SystemParams()


@pytest.fixture(params=["fock-0-2", "fock-0-3", "binomial-1"])
def code(request):
    return get_code(request.param)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ----------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    """Record (and print) one PASS/FAIL line for an acceptance criterion."""
    def report(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
