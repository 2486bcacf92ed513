import numpy as np
import pytest
from hypothesis import settings

from pricing_ope.core import ActionSpace, LearningSample
from pricing_ope.simenv import load_environment, simulate_config

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

# three customers with identical features, offered 10/20/30% uniformly at random
THREE_LEVELS = ActionSpace((0.1, 0.2, 0.3))


@pytest.fixture
def three_customers():
    return LearningSample(
        features=np.zeros((3, 1)),
        actions=np.array([0, 1, 2]),
        rewards=np.array([90.0, 0.0, 70.0]),
        propensities=np.full((3, 3), 1 / 3),
        action_space=THREE_LEVELS,
    )


@pytest.fixture(scope="session")
def env():
    return load_environment()


@pytest.fixture(scope="session")
def small_sim(env):
    return simulate_config(env, 4000, seed=11)


def random_sample(rng, n=200, d=5, p=3, levels=None, uniform=False):
    """Synthetic logged sample with random (or uniform) logging propensities."""
    space = ActionSpace(tuple(levels)) if levels is not None else ActionSpace.grid(-0.2, 0.2, d)
    d = space.size
    if uniform:
        P = np.full((n, d), 1.0 / d)
    else:
        P = rng.dirichlet(np.full(d, 3.0), size=n)
        P = 0.05 / d + 0.95 * P
    A = np.array([rng.choice(d, p=row) for row in P])
    return LearningSample(rng.normal(size=(n, p)), A, rng.gamma(2.0, 1.0, size=n), P, space)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def report_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
