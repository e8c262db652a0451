import numpy as np
import pytest

from eventrl.mdp import TabularMDP


def single_state(p1, horizon, num_actions=1):
    """One state, every action a self-loop, constant event probability."""
    A = num_actions
    return TabularMDP(np.ones((1, A, 1)), [1.0], np.full((1, A), p1), horizon)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


# one line per acceptance criterion, printed after the test session
ACCEPTANCE_LINES: list = []


def record(criterion: str, passed: bool, detail: str, info: bool = False) -> None:
    tag = "INFO" if info else ("PASS" if passed else "FAIL")
    line = f"{tag}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
