import numpy as np
import pytest

from cumgain.env import Allocation, DayObservation, Scenario


@pytest.fixture
def two_arm():
    return Scenario.stationary([0.6, 0.4], traffic=1000, horizon=10)


def make_obs(day, impressions, successes, probs):
    return DayObservation(
        day,
        np.asarray(impressions, dtype=np.int64),
        np.asarray(successes, dtype=np.int64),
        Allocation(probs),
    )


# one line per acceptance criterion, printed after the test run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
