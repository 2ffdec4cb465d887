import numpy as np
import pytest

from wpflow.energy import FlowParams, power_law_model


@pytest.fixture
def quad_model():
    """``H(u) = u^2``: the p = 2, gamma = 2 power law."""
    return power_law_model(FlowParams(2.0, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
