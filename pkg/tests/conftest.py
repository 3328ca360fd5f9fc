import pytest

from ruin2d.model import ClaimDist, ModelParams


@pytest.fixture
def diffusion_params():
    return ModelParams(1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0)


@pytest.fixture
def claim_params():
    return ModelParams(2.0, 2.0, 1.0, 1.0, 0.3, 0.3, 0.2)


@pytest.fixture
def mixed_params():
    """Unequal lines with one exponential and one uniform claim law."""
    return ModelParams(1.5, 0.8, 1.2, 0.7, 0.4, 0.2, 0.3, ClaimDist.exponential(2.0), ClaimDist.uniform(1.5))
