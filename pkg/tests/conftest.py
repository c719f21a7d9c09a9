import warnings

import numpy as np
import pytest

from sharedlane.experiments import prepare
from sharedlane.linmjls import find_equilibrium, linearize
from sharedlane.markov import HiddenRates, ObservationParams, build_joint_generator
from sharedlane.models import DesiredSpeedCurve, DriverModel, FollowerModel, TaskDifficultyParams
from sharedlane.scenario import bundled
from sharedlane.synthesis import synthesize

warnings.filterwarnings("ignore", message="Solution may be inaccurate")


@pytest.fixture(scope="session")
def driver():
    return DriverModel((0.25, 0.18), (0.10, 0.17), DesiredSpeedCurve(20.0, 3.5, 20.5))


@pytest.fixture(scope="session")
def follower():
    return FollowerModel(0.26, 0.09, DesiredSpeedCurve(28.0, 3.0, 22.0))


@pytest.fixture(scope="session")
def td_params():
    return TaskDifficultyParams(1.09, 0.30, 1.0)


@pytest.fixture(scope="session")
def rates():
    return HiddenRates.from_offdiag(0.0454, 0.1117)


@pytest.fixture(scope="session")
def gen(rates):
    return build_joint_generator(rates, ObservationParams(0.05, 0.02))


@pytest.fixture(scope="session")
def ngsim():
    return bundled("ngsim")


@pytest.fixture(scope="session")
def plant(ngsim):
    return prepare(ngsim)


@pytest.fixture(scope="session")
def nominal_gains(plant, ngsim):
    return synthesize(plant.sys, plant.gen, eps_grid=ngsim.eps_grid)


@pytest.fixture(scope="session")
def mic2_gains(plant, ngsim):
    return synthesize(plant.sys, plant.gen, beta=2.0, eps_grid=ngsim.eps_grid)


@pytest.fixture(scope="session")
def sys10(driver, follower):
    return linearize(driver, follower, find_equilibrium(driver, follower, 10.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ---------------------------------------------------------

ACCEPTANCE_LINES: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    def record(criterion: str, checks: list[tuple[str, bool]]) -> bool:
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{name} {'ok' if passed else 'FAILED'}" for name, passed in checks)
        ACCEPTANCE_LINES[criterion] = f"{criterion}: {'PASS' if ok else 'FAIL'} | {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k.split()[1])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
