import numpy as np
import pytest

from failmon import FeatureTensor, NominalMemory


def make_memory(rng, horizon=8, n_patches=4, n_features=6, sigma_floor=1e-3):
    """Random well-separated memory for identity/alignment tests."""
    mean = rng.normal(0.0, 2.0, (horizon, n_patches, n_features)).astype(np.float32)
    std = rng.uniform(0.5, 2.0, (horizon, n_patches, n_features)).astype(np.float32)
    return NominalMemory(mean=mean, std=std, sigma_floor=sigma_floor, source_episode_count=5)


def make_tensor(rng, n_episodes=4, horizon=6, n_patches=3, n_features=5, encoder_id="test"):
    data = rng.normal(0.0, 1.0, (n_episodes, horizon, n_patches, n_features)).astype(np.float32)
    return FeatureTensor(data=data, encoder_id=encoder_id)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
