import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from raschmc.model import HIERARCHICAL, IGAMMA, RASCH, UNIFORM_SD, ModelSpec, simulate_data

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ALL_SPECS = [ModelSpec(v, r) for v in (RASCH, HIERARCHICAL) for r in (IGAMMA, UNIFORM_SD)]


def spec_id(spec):
    return f"{spec.variant}-{spec.prior_regime}"


@pytest.fixture(params=ALL_SPECS, ids=spec_id)
def any_spec(request):
    return request.param


@pytest.fixture(scope="session")
def small_data():
    data, truth = simulate_data(6, 15, seed=3)
    return data, truth


@pytest.fixture(scope="session")
def data_100():
    return simulate_data(20, 100, seed=11)


def random_point(spec, I, P, rng, scale=0.7):
    return rng.normal(size=spec.dim(I, P)) * scale


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
