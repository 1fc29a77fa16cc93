"""Shared fixtures: expensive surfaces and measures built once per session."""

import numpy as np
import pytest

from extlab import build_surface
from extlab.measures import cantor_product_measure


@pytest.fixture(scope="session")
def paraboloid64():
    return build_surface("paraboloid", 64)


@pytest.fixture(scope="session")
def paraboloid32():
    return build_surface("paraboloid", 32)


@pytest.fixture(scope="session")
def cantor32_level3():
    """alpha = 3/2 Cantor product at level 3 (512 atoms)."""
    return cantor_product_measure(1.5, 3)


@pytest.fixture(scope="session")
def cantor32_level4():
    """alpha = 3/2 Cantor product at level 4 (4096 atoms)."""
    return cantor_product_measure(1.5, 4)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)
