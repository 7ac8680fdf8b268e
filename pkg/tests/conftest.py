import numpy as np
import pytest

from pacesim.environments import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def pytest_configure(config):
    np.seterr(all="raise", under="ignore")


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES.setdefault(number, []).append((passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        parts = ACCEPTANCE_LINES[number]
        verdict = "PASS" if all(p for p, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {verdict} | " + "; ".join(d for _, d in parts))
