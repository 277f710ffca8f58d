"""
Representation Probes

Frozen-backbone linear probing of each layer's pooled representation, and the
anisotropy curve: the mean pairwise cosine similarity between the token
representations of a sample, per layer.

Layer 0 is the embedding output, layer l the output of transformer layer l.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from . import functional as F
from .classes import MetricResult
from .data import Dataset, TokenizerSpec, encode_dataset, remap_labels
from .errors import InputError, RunFailure
from .metrics import metric
from .model import ModelState, PoolMode, encode, pool
from .optim import AdamW
from .rng import RngStream
from .synthetic import TaskData
from .tensor import Tensor, no_grad
from .trainer import batches, labeled

logger = logging.getLogger(__name__)

PROBE_LR = 1e-3
PROBE_EPOCHS = 3
PROBE_BATCH = 16


@dataclass(frozen=True)
class ProbeResult:
    task: str
    metric: str
    seed: int
    checkpoint: str
    scores: tuple[tuple[int, float], ...]
    degenerate: tuple[int, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "metric": self.metric,
            "seed": self.seed,
            "checkpoint": self.checkpoint,
            "layers": [{"layer": l, "score": s} for l, s in self.scores],
            "degenerate": list(self.degenerate),
        }


@dataclass(frozen=True)
class SimilarityCurve:
    values: tuple[tuple[int, float], ...]
    n_samples: int
    skipped: int = 0
    exclude_first: bool = False
    checkpoint: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "checkpoint": self.checkpoint,
            "n_samples": self.n_samples,
            "skipped": self.skipped,
            "exclude_first": self.exclude_first,
            "layers": [{"layer": l, "similarity": s} for l, s in self.values],
        }


def layer_features(
    state: ModelState,
    dataset: Dataset,
    tokenizer: TokenizerSpec,
    max_len: int = 128,
    pool_mode: PoolMode = "first",
    batch_size: int = 64,
) -> list[np.ndarray]:
    """Pooled eval-mode representation of every example, one matrix per layer."""
    encodings = encode_dataset(tokenizer, dataset, min(max_len, state.config.max_seq_len))
    per_layer: list[list[np.ndarray]] = [[] for _ in range(state.config.n_layers + 1)]
    with no_grad():
        for _, batch in batches(encodings, np.arange(len(encodings)), batch_size, tokenizer.pad_id, "batch", max_len):
            acts = encode(state, batch, "eval")
            for l, h in enumerate(acts.hidden):
                per_layer[l].append(pool(h, batch.attention_mask, pool_mode))
    return [np.concatenate(chunks) for chunks in per_layer]


def train_probe(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_dev: np.ndarray,
    y_dev: np.ndarray,
    kind: str,
    n_out: int,
    regression: bool = False,
    seed: int = 0,
    lr: float = PROBE_LR,
    epochs: int = PROBE_EPOCHS,
    batch_size: int = PROBE_BATCH,
) -> MetricResult:
    """Fit a fresh linear head on fixed features and score it on the dev features."""
    d = x_train.shape[1]
    weight = Tensor(
        RngStream(seed, purpose="probe:head").generator().normal(0.0, 0.02, size=(d, n_out)),
        requires_grad=True,
        name="probe.weight",
    )
    bias = Tensor(np.zeros(n_out), requires_grad=True, name="probe.bias")
    optimizer = AdamW({"probe.weight": weight, "probe.bias": bias}, weight_decay=0.0)

    for epoch in range(1, epochs + 1):
        order = RngStream(seed, step=epoch, purpose="probe:shuffle").generator().permutation(len(x_train))
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            out = Tensor(x_train[idx]) @ weight + bias
            if regression:
                loss = F.mse(out.reshape(len(idx)), y_train[idx].astype(np.float64))
            else:
                loss = F.cross_entropy(out, y_train[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)

    scores = x_dev @ weight.data + bias.data
    predictions = scores[:, 0] if regression else np.argmax(scores, axis=-1)
    return metric(kind, predictions, y_dev)  # type: ignore[arg-type]


def _task_splits(task: TaskData, label_map: Mapping[str, str] | None) -> tuple[Dataset, Dataset]:
    train, dev = labeled(task.train), labeled(task.dev)
    if label_map:
        train, dev = remap_labels(train, label_map), remap_labels(dev, label_map)
        if train.label_names != dev.label_names:
            raise InputError("label mapping yields different label spaces for train and dev")
    return train, dev


def probe_layers(
    state: ModelState,
    task: TaskData,
    tokenizer: TokenizerSpec,
    layers: Sequence[int] | None = None,
    seed: int = 0,
    max_len: int = 128,
    label_map: Mapping[str, str] | None = None,
    checkpoint: str = "",
    pool_mode: PoolMode = "first",
) -> ProbeResult:
    """
    Linear probe on each requested layer (all of 0..n by default). The
    backbone is only read; its checksum is compared before and after.
    """
    n = state.config.n_layers
    layers = list(range(n + 1)) if layers is None else list(layers)
    bad = [l for l in layers if not 0 <= l <= n]
    if bad:
        raise InputError(f"probe layer {bad[0]} out of range for a {n}-layer model (0..{n})")

    before = state.checksum(include_head=False)
    train, dev = _task_splits(task, label_map)
    regression = train.kind == "regression"
    x_train = layer_features(state, train, tokenizer, max_len, pool_mode)
    x_dev = layer_features(state, dev, tokenizer, max_len, pool_mode)

    scores, degenerate = [], []
    for l in layers:
        result = train_probe(
            x_train[l],
            train.targets(),
            x_dev[l],
            dev.targets(),
            task.metric,
            1 if regression else train.n_classes,
            regression,
            seed,
        )
        scores.append((l, result.value))
        if result.degenerate:
            degenerate.append(l)
        logger.info("probe %s layer %d: %s %.4f", task.name, l, task.metric, result.value)

    if state.checksum(include_head=False) != before:
        raise RunFailure("backbone parameters changed during probing")
    return ProbeResult(task.name, task.metric, seed, checkpoint or before, tuple(scores), tuple(degenerate))


def linear_probe(
    state: ModelState,
    task: TaskData,
    layer: int,
    tokenizer: TokenizerSpec,
    seed: int = 0,
    max_len: int = 128,
    label_map: Mapping[str, str] | None = None,
) -> float:
    """Dev score of a linear probe on layer `layer` of a frozen backbone."""
    return probe_layers(state, task, tokenizer, [layer], seed, max_len, label_map).scores[0][1]


def token_similarity(h: np.ndarray, mask: np.ndarray | None = None, exclude_first: bool = False) -> float | None:
    """
    Mean cosine similarity over unordered pairs of the sample's tokens
    (padding excluded), or None with fewer than two tokens. A zero vector has
    cosine 0 with everything.
    """
    h = np.asarray(h, dtype=np.float64)
    keep = np.ones(h.shape[0], dtype=bool) if mask is None else np.asarray(mask).astype(bool)
    if exclude_first:
        keep = keep.copy()
        keep[0] = False
    vecs = h[keep]
    n = vecs.shape[0]
    if n < 2:
        return None
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
    upper = np.triu_indices(n, k=1)
    return float((unit @ unit.T)[upper].mean())


@dataclass
class _Accumulator:
    totals: list[float] = field(default_factory=list)
    count: int = 0
    skipped: int = 0


def similarity_curve(
    state: ModelState,
    dataset: Dataset,
    tokenizer: TokenizerSpec,
    max_len: int = 128,
    exclude_first: bool = False,
    batch_size: int = 64,
    checkpoint: str = "",
) -> SimilarityCurve:
    """
    S^l for every layer l: the per-sample similarity averaged over the M
    samples with at least two counted tokens, in dataset order.
    """
    max_len = min(max_len, state.config.max_seq_len)
    encodings = encode_dataset(tokenizer, dataset, max_len)
    acc = _Accumulator([0.0] * (state.config.n_layers + 1))
    with no_grad():
        for idx, batch in batches(encodings, np.arange(len(encodings)), batch_size, tokenizer.pad_id, "batch", max_len):
            acts = encode(state, batch, "eval")
            for row, example_index in enumerate(idx):
                values = [token_similarity(h.data[row], batch.attention_mask[row], exclude_first) for h in acts.hidden]
                if values[0] is None:
                    acc.skipped += 1
                    logger.warning("sample %d has fewer than 2 tokens, skipped", example_index)
                    continue
                acc.count += 1
                for l, v in enumerate(values):
                    acc.totals[l] += v  # type: ignore[operator]
    if acc.count == 0:
        raise InputError(f"no sample of '{dataset.name}' has two or more tokens")
    values = tuple((l, total / acc.count) for l, total in enumerate(acc.totals))
    return SimilarityCurve(values, acc.count, acc.skipped, exclude_first, checkpoint or state.checksum(include_head=False))
