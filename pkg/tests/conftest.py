import numpy as np
import pytest

from zisae.bayes import McmcConfig
from zisae.synthetic import make_population, make_region


@pytest.fixture(scope="session")
def small_region():
    return make_region(n_pixels=3000, n_counties=4, n_donors=400, n_sample=120, extent=(60.0, 50.0), seed=3)


@pytest.fixture(scope="session")
def small_population(small_region):
    return make_population(small_region, seed=1)


@pytest.fixture(scope="session")
def small_sample(small_region, small_population):
    from zisae.sim import draw_sample

    return draw_sample(small_population, small_region.sizes, np.random.default_rng(0))


@pytest.fixture
def quick_mcmc():
    return McmcConfig(chains=2, iterations=600, burn_in=200, thin=4, seed=11)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
