import itertools
import math

import numpy as np
import pytest

from hypelab.data import Dataset, Example
from hypelab.errors import InputError
from hypelab.model import ModelConfig, init_params
from hypelab.probe import linear_probe, probe_layers, similarity_curve, token_similarity
from hypelab.synthetic import TaskData


def naive_similarity(h, mask):
    vecs = [h[i] for i in range(len(h)) if mask[i]]
    total, pairs = 0.0, 0
    for a, b in itertools.combinations(vecs, 2):
        na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
        total += 0.0 if na == 0 or nb == 0 else sum(x * y for x, y in zip(a, b)) / (na * nb)
        pairs += 1
    return total / pairs


def test_similarity_trivial_cases():
    assert token_similarity(np.tile([0.3, -1.0, 2.0], (5, 1))) == pytest.approx(1.0, abs=1e-12)
    assert token_similarity(np.array([[1.0, 0.0], [0.0, 1.0]])) == 0.0
    expected = (0 + 1 / math.sqrt(2) + 1 / math.sqrt(2)) / 3
    assert abs(token_similarity(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])) - expected) < 1e-12


def test_similarity_matches_double_loop():
    gen = np.random.default_rng(0)
    for _ in range(100):
        n = int(gen.integers(2, 12))
        h = gen.normal(size=(n, 6))
        mask = np.ones(n, dtype=int)
        mask[int(gen.integers(2, n + 1)) :] = 0
        assert abs(token_similarity(h, mask) - naive_similarity(h, mask)) < 1e-12


def test_similarity_invariances():
    gen = np.random.default_rng(1)
    h = gen.normal(size=(7, 5))
    base = token_similarity(h)
    assert token_similarity(h[gen.permutation(7)]) == pytest.approx(base, abs=1e-12)
    assert token_similarity(3.5 * h) == pytest.approx(base, abs=1e-12)


def test_similarity_edge_cases():
    assert token_similarity(np.ones((3, 2)), np.array([1, 0, 0])) is None
    assert token_similarity(np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), exclude_first=True) == 0.0
    assert token_similarity(np.array([[0.0, 0.0], [1.0, 0.0]])) == 0.0


def test_similarity_curve_covers_every_layer(small_suite):
    curve = similarity_curve(vocab_state(small_suite), small_suite.tasks["paraphrase"].dev, small_suite.tokenizer, max_len=16)
    assert [layer for layer, _ in curve.values] == [0, 1, 2]
    assert curve.n_samples == len(small_suite.tasks["paraphrase"].dev)
    assert all(-1.0 <= v <= 1.0 for _, v in curve.values)


def test_similarity_curve_skips_short_samples(small_suite):
    state = init_params(ModelConfig(n_layers=1, d_model=8, n_heads=2, d_ff=16, vocab_size=512, max_seq_len=16), 0)
    data = Dataset("short", (Example("the cat"), Example("")))
    curve = similarity_curve(state, data, small_suite.tokenizer, max_len=16, exclude_first=True)
    assert curve.n_samples == 1 and curve.skipped == 1


def balanced_task(n_train=120, n_dev=80, seed=0):
    gen = np.random.default_rng(seed)
    words = ["red", "blue", "green", "small", "big", "cat", "dog", "sun"]

    def split(n, tag):
        labels = gen.permutation(np.arange(n) % 2)
        examples = [Example(" ".join(gen.choice(words, size=5)), None, int(y)) for y in labels]
        return Dataset(f"balanced.{tag}", tuple(examples), "classification", ("no", "yes"))

    return TaskData("balanced", split(n_train, "train"), split(n_dev, "dev"), "accuracy")


def vocab_state(small_suite, seed=0):
    config = ModelConfig(n_layers=2, d_model=16, n_heads=2, d_ff=32, vocab_size=len(small_suite.tokenizer), max_seq_len=16)
    return init_params(config, seed)


def test_probe_leaves_backbone_unchanged(small_suite):
    state = vocab_state(small_suite)
    before = state.checksum(include_head=False)
    result = probe_layers(state, small_suite.tasks["acceptability"], small_suite.tokenizer, layers=[0, 2], max_len=16)
    assert state.checksum(include_head=False) == before
    assert [layer for layer, _ in result.scores] == [0, 2]
    assert result.checkpoint == before


def test_probe_layer_range(small_suite):
    with pytest.raises(InputError, match="out of range"):
        probe_layers(vocab_state(small_suite), small_suite.tasks["acceptability"], small_suite.tokenizer, layers=[3])


def test_probe_on_random_labels_is_at_chance(small_suite):
    scores = []
    for seed in range(10):
        task = balanced_task(seed=seed)
        scores.append(linear_probe(vocab_state(small_suite, seed), task, 2, small_suite.tokenizer, seed=seed, max_len=16))
    n_dev = 80
    stderr = math.sqrt(0.25 / (n_dev * len(scores)))
    assert abs(np.mean(scores) - 0.5) < 4 * stderr


def test_probe_with_label_map(small_suite):
    task = small_suite.tasks["acceptability"]
    result = probe_layers(
        vocab_state(small_suite),
        task,
        small_suite.tokenizer,
        layers=[1],
        max_len=16,
        label_map={"unacceptable": "unacceptable", "acceptable": "acceptable"},
    )
    assert result.metric == "matthews"


def test_top_layer_of_fine_tuned_model_beats_chance(clean_suite, trained_acceptability):
    state = trained_acceptability.state
    task = clean_suite.tasks["acceptability"]
    top = linear_probe(state, task, state.config.n_layers, clean_suite.tokenizer, max_len=24)
    # matthews is 0 at chance
    assert top >= 0.1
