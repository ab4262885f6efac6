import numpy as np
import pytest

from crflab.bolza import BaseGeometry, build_bolza
from crflab.grids import GridSpec


@pytest.fixture(scope="session")
def group():
    return build_bolza()


@pytest.fixture(scope="session")
def geo33(group):
    return BaseGeometry(GridSpec(base_nx=33, base_ny=33), group)


@pytest.fixture(scope="session")
def geo65(group):
    return BaseGeometry(GridSpec(base_nx=65, base_ny=65), group)


@pytest.fixture(scope="session")
def geo129(group):
    return BaseGeometry(GridSpec(base_nx=129, base_ny=129), group)


@pytest.fixture(scope="session")
def geo_full21(group):
    spec = GridSpec(base_nx=21, base_ny=21, fiber_nx=8, fiber_ny=8,
                    mode="full")
    return BaseGeometry(spec, group)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance runs")
