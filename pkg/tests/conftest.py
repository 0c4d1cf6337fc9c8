import numpy as np
import pytest
import torch

import boxguide.numeric_core  # noqa: F401  (pins float64 + deterministic kernels)
from boxguide.toy_model.denoiser import DenoiserConfig, ToyDenoiser

SMALL_CONFIG = DenoiserConfig(image_size=8, channels=1, base=8, embed_dim=8, attn_dim=8, time_dim=16, groups=4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    """Untrained 8x8 denoiser: attention grids of 4x4 and 2x2."""
    torch.manual_seed(7)
    return ToyDenoiser(SMALL_CONFIG).eval()


@pytest.fixture(scope="session")
def toy_model():
    """Untrained full-size denoiser with fixed weights."""
    torch.manual_seed(11)
    return ToyDenoiser().eval()
