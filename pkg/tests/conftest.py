import numpy as np
import pytest

from marlfocal.data import SyntheticPoolSpec, synth_stream


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def lift_pool(seed=0):
    """Three independent agents at 0.70 and two perfectly correlated clones at 0.75."""
    return SyntheticPoolSpec(n=5, k=4, accuracies=[0.7, 0.7, 0.7, 0.75, 0.75], groups=[0, 1, 2, 3, 3],
                             corr=1.0, seed=seed)


@pytest.fixture
def small_stream():
    spec = lift_pool(3)
    return synth_stream(spec, 120, np.random.default_rng(3))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
