import numpy as np
import pytest

from bubbleforge.geometry import build_grid, unit_disk, unit_square
from bubbleforge.problem import build_core, setup


@pytest.fixture(scope="session")
def square_grid_65():
    return build_grid(unit_square(), 65)


@pytest.fixture(scope="session")
def disk_grid_65():
    return build_grid(unit_disk(), 65)


@pytest.fixture(scope="session")
def square_core_129():
    return build_core(unit_square(), 129)


@pytest.fixture(scope="session")
def disk_core_129():
    return build_core(unit_disk(), 129)


@pytest.fixture(scope="session")
def disk_core_257():
    return build_core(unit_disk(), 257)


@pytest.fixture(scope="session")
def disk_problem_s6(disk_core_257):
    # resolved regime: core scale mu*delta ~ 2.2 cells at n=257
    return setup(disk_core_257, h_source="zero", s=6.0)


@pytest.fixture(scope="session")
def disk_problem_s10_129(disk_core_129):
    return setup(disk_core_129, h_source="zero", s=10.0)
