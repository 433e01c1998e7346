import numpy as np
import pytest

from microlaser.params import MicrolaserParams, baseline_params


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture
def paper_point():
    """Operating point used throughout: N_ex=10, Theta=2, small transit."""
    return MicrolaserParams.for_dimensionless(10.0, 2.0, 0.03)


@pytest.fixture
def wide_spread_point():
    return baseline_params(v0=762.0, dv_over_v0=0.33)
