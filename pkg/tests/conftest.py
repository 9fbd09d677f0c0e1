import numpy as np
import pytest
import torch

from regionprompt import data
from regionprompt.encoders import EncoderBundle
from regionprompt.training import RunConfig, train


@pytest.fixture(scope="session")
def train_split():
    return data.synth_corpus(seed=7, n=256, image_side=32)


@pytest.fixture(scope="session")
def val_split():
    return data.synth_corpus(seed=8, n=64, image_side=32, split="val")


@pytest.fixture(scope="session")
def trained_runs(train_split):
    """Cache of trained checkpoints keyed by config, shared across tests."""
    cache = {}

    def get(**kwargs):
        key = repr(sorted(kwargs.items()))
        if key not in cache:
            cache[key] = train(RunConfig(**kwargs), train_split)
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def random_unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return torch.tensor(m / np.linalg.norm(m, axis=1, keepdims=True))


@pytest.fixture
def seeded_bundle():
    def make(seed=0, **kwargs):
        torch.manual_seed(seed)
        return EncoderBundle(**kwargs)

    return make
