import numpy as np
import pytest

from hypelab.classes import Batch
from hypelab.model import ModelConfig, init_params
from hypelab.perturb import DropoutSpec
from hypelab.synthetic import generate_synthetic_suite
from hypelab.trainer import TrainRunConfig, finetune


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(n_layers=2, d_model=8, n_heads=2, d_ff=16, vocab_size=40, max_seq_len=16)


@pytest.fixture
def tiny_state(tiny_config):
    return init_params(tiny_config, seed=0)


@pytest.fixture
def four_layer_state():
    return init_params(ModelConfig(n_layers=4, d_model=8, n_heads=2, d_ff=16, vocab_size=40, max_seq_len=16), seed=1)


@pytest.fixture
def batch() -> Batch:
    gen = np.random.default_rng(7)
    ids = gen.integers(5, 40, size=(3, 6))
    mask = np.ones_like(ids)
    mask[1, 4:] = 0
    ids[1, 4:] = 0
    segments = np.zeros_like(ids)
    segments[:, 3:] = 1
    return Batch(ids, mask, segments)


@pytest.fixture(scope="session")
def small_suite():
    return generate_synthetic_suite(seed=0, n_train=160, n_dev=60, corpus_size=400)


@pytest.fixture
def write_config(tmp_path):
    def write(text: str, name: str = "experiment.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write


@pytest.fixture(scope="session")
def clean_suite():
    return generate_synthetic_suite(seed=0, n_train=600, n_dev=200, corpus_size=50, label_noise=0.0)


@pytest.fixture(scope="session")
def trained_acceptability(clean_suite):
    """One clean fine-tuning run on acceptability, shared by the tests that need a trained model."""
    model = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=len(clean_suite.tokenizer), max_seq_len=24)
    config = TrainRunConfig(task="acceptability", technique="plain", model=model, dropout=DropoutSpec(0.0))
    config = config.edit(peak_lr=1e-3, epochs=3, batch_size=16, max_len=24)
    return finetune(config, clean_suite.tasks["acceptability"], clean_suite.tokenizer)
