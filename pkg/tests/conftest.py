import os

import pytest
from hypothesis import HealthCheck, settings

from damp.corpus import GeneratorConfig, generate_corpus, split_dataset
from damp.defense import fit
from damp.model import TrainConfig

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(GeneratorConfig(methods_per_label=40))


@pytest.fixture(scope="session")
def small_splits(small_corpus):
    return split_dataset(small_corpus, (0.8, 0.1, 0.1), 0)


@pytest.fixture(scope="session")
def small_model(small_splits):
    """Token-mode classifier trained for a few epochs on 256 methods."""
    model, _ = fit(small_splits[0], TrainConfig(epochs=20))
    return model


@pytest.fixture(scope="session")
def small_char_model(small_splits):
    model, _ = fit(small_splits[0], TrainConfig(epochs=10, mode="char"))
    return model


@pytest.fixture(scope="session")
def tiny_vocab_model(small_splits):
    """Token model whose vocabulary holds at most 50 names, for exhaustive oracles."""
    model, _ = fit(small_splits[0], TrainConfig(epochs=20), vocab_size=50)
    return model
