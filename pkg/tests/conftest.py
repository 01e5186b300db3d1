import numpy as np
import pytest

from avse.mixture import make_segments, synth_corpus
from avse.model import ModelConfig, init_weights


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def toy_cfg():
    return ModelConfig.toy()


@pytest.fixture(scope="session")
def toy_weights(toy_cfg):
    return init_weights(toy_cfg, seed=7)


@pytest.fixture(scope="session")
def small_corpus():
    """Four 3-second clean/noise/embedding triples."""
    return synth_corpus(seed=11, n_items=4)


@pytest.fixture(scope="session")
def small_items(small_corpus):
    items = []
    for i, c in enumerate(small_corpus):
        items.extend(make_segments(c.clean, c.noise, c.embeddings, (-6.0, 0.0)[i % 2], seed=i))
    return items
