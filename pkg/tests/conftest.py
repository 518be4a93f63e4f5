import numpy as np
import pytest
import torch

from autoprotonet.data import EpisodeSpec, sample_episode, synthetic_benchmark
from autoprotonet.network import ArchitectureConfig, build_model

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_splits():
    """Small synthetic benchmark: 4 train / 2 val / 2 test classes, 10 images."""
    return synthetic_benchmark(
        num_train=4, num_val=2, num_test=2, images_per_class=10, resolution=(32, 32), seed=3
    )


@pytest.fixture(scope="session")
def tiny_model():
    return build_model(ArchitectureConfig(input_resolution=(32, 32)), seed=7)


@pytest.fixture(scope="session")
def tiny_episode(tiny_splits):
    return sample_episode(
        tiny_splits["meta-train"], EpisodeSpec(way=3, shot=2, query_count=2, seed=5)
    )


@pytest.fixture()
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(1234)))
