import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dirbilevel import lower, model, oracles, sensitivity  # noqa: E402

ACCEPTANCE_LINES = []


def record_acceptance(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  [{number:2d}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def ex51():
    return oracles.EX51


@pytest.fixture(scope="session")
def ex31():
    return oracles.EX31


@pytest.fixture(scope="session")
def ex51_fod(ex51):
    return model.first_order(ex51.program, ex51.xbar, ex51.ybar)


@pytest.fixture(scope="session")
def ex31_fod(ex31):
    return model.first_order(ex31.program, ex31.xbar, ex31.ybar)


def theta_for(inst, u):
    """Theta estimate at the instance point in direction ``u`` (exact lower level)."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ds = lower.directional_solutions(inst.program, inst.xbar, u, lower=inst)
    return sensitivity.theta_set(inst.program, inst.xbar, u, ds)
