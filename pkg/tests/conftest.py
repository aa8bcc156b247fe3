import numpy as np
import pytest

from pupilrecon.aperture import Coded, spiral_small_apertures
from pupilrecon.deconvolution import build_big_mask_set
from pupilrecon.pipeline import ACCEPTANCE_ABERRATION, coded_pattern
from pupilrecon.simulator import make_pupil

N = 256
R = 60.0


@pytest.fixture(scope="session")
def acceptance_pupil():
    return make_pupil(N, R, ACCEPTANCE_ABERRATION)


@pytest.fixture(scope="session")
def acceptance_scan():
    return spiral_small_apertures(R, R / 2.75, 0.4)


@pytest.fixture(scope="session")
def pattern():
    # default seeded search; about 15 s
    return coded_pattern({})


@pytest.fixture(scope="session")
def big_masks(pattern):
    return build_big_mask_set(Coded(pattern, 0, 2 * R), R)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
