import numpy as np
import pytest

from adainfer import ModelConfig, TrainHyperparams, init_weights, make_copy_corpus, train_toy


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(num_layers=2, hidden_size=8, num_heads=2,
                       vocab_size=16, max_seq_len=8)


@pytest.fixture(scope="session")
def tiny_weights(tiny_config):
    return init_weights(tiny_config, seed=42)


def random_model(rng, num_layers=None, hidden=None, heads=None, vocab=None, max_seq=8):
    """Small random model for property tests; shapes drawn when not pinned."""
    heads = heads or int(rng.choice([1, 2]))
    hidden = hidden or heads * int(rng.choice([4, 8]))
    config = ModelConfig(
        num_layers=num_layers or int(rng.integers(1, 4)),
        hidden_size=hidden,
        num_heads=heads,
        vocab_size=vocab or int(rng.integers(2, 24)),
        max_seq_len=max_seq,
    )
    weights = init_weights(config, seed=int(rng.integers(0, 2 ** 31)))
    return config, weights


def random_tokens(rng, config, max_len=None):
    length = int(rng.integers(1, (max_len or config.max_seq_len) + 1))
    return rng.integers(0, config.vocab_size, size=length)


# Trained 4-layer copy-task model, shared by the runtime and acceptance
# suites (training is the expensive part of the session).
TOY4_CONFIG = ModelConfig(num_layers=4, hidden_size=32, num_heads=4,
                          vocab_size=32, max_seq_len=8)
TOY4_TRAIN_SEED = 3
TOY4_MODEL_SEED = 5


@pytest.fixture(scope="session")
def toy4_corpus():
    return make_copy_corpus(256, TOY4_CONFIG, seed=TOY4_TRAIN_SEED)


@pytest.fixture(scope="session")
def toy4_model(toy4_corpus):
    hp = TrainHyperparams(epochs=12, learning_rate=3e-3, seed=TOY4_MODEL_SEED)
    weights = train_toy(toy4_corpus, TOY4_CONFIG, hp)
    return weights, TOY4_CONFIG


@pytest.fixture(scope="session")
def toy4_eval_corpus():
    return make_copy_corpus(300, TOY4_CONFIG, seed=11)
