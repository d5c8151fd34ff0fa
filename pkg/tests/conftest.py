import functools

import pytest
from hypothesis import HealthCheck, settings

from hucsdp.fixtures import bundled
from hucsdp.pipeline import PipelineOptions, solve_bb, solve_rh
from hucsdp.relaxation import solve_p1

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def instance(name):
    return bundled(name)


@functools.lru_cache(maxsize=None)
def relaxation(name):
    return solve_p1(instance(name))


@functools.lru_cache(maxsize=None)
def rh(name):
    return solve_rh(instance(name))


@functools.lru_cache(maxsize=None)
def bb(name):
    return solve_bb(instance(name), PipelineOptions())


@pytest.fixture(scope="session")
def small():
    return instance("small")


@pytest.fixture(scope="session")
def medium():
    return instance("medium")


VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
