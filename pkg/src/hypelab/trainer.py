"""
Fine-tuning Loop and Grid Search

`finetune` trains a classification or regression head together with the
encoder on one task under one perturbation technique, evaluating on the dev
split with clean forward passes after every epoch. `grid_search` runs every
(learning rate, seed) cell of a grid and reduces the completed runs to the
best learning rate's mean and (population) standard deviation across seeds.
"""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, TokenizerSpec, collate, encode_dataset
from .errors import InputError, RunFailure
from .metrics import majority_baseline, metric
from .model import ModelConfig, ModelState, attach_head, classify, encode, init_params, task_loss
from .optim import AdamW, ScheduleSpec, lr_at
from .perturb import NO_NOISE, DropoutSpec, NoiseSpec, PerturbationTrace, resolve_dropout
from .rng import RngStream
from .synthetic import TaskData
from .tensor import no_grad

logger = logging.getLogger(__name__)

Status = Literal["completed", "collapsed"]


@dataclass(frozen=True)
class TrainRunConfig:
    task: str
    technique: str = "custom"
    model: ModelConfig = ModelConfig()
    checkpoint: str | None = None
    noise: NoiseSpec = NO_NOISE
    dropout: DropoutSpec = DropoutSpec(0.1)
    combine: bool = False
    peak_lr: float = 2e-5
    epochs: int = 3
    batch_size: int = 16
    warmup_fraction: float = 0.1
    warmup_steps: int | None = None
    max_len: int = 128
    pad_to: Literal["batch", "max_len"] = "batch"
    betas: tuple[float, float] = (0.9, 0.99)
    eps: float = 1e-5
    weight_decay: float = 0.1
    decay_all: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InputError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise InputError(f"warmup fraction must lie in [0, 1], got {self.warmup_fraction}")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise InputError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        if not self.peak_lr > 0:
            raise InputError(f"learning rate must be positive, got {self.peak_lr}")
        if self.seed < 0:
            raise InputError(f"seed must be >= 0, got {self.seed}")

    def edit(self, **kwargs) -> "TrainRunConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        mask = self.noise.layer_mask
        out["noise"]["layer_mask"] = sorted(mask) if mask is not None else None
        out["betas"] = list(self.betas)
        return out


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    dev_score: float
    degenerate: bool = False


@dataclass(frozen=True)
class RunRecord:
    """
    Outcome of one fine-tuning run. Scores are in points (metric x 100).

    `wall_clock` and `state` are not part of the serialized record, so two
    runs of one config serialize identically.
    """

    config: TrainRunConfig
    metric: str
    status: Status
    epochs: tuple[EpochRecord, ...]
    final_score: float | None
    parts: dict[str, float] = field(default_factory=dict)
    baseline_score: float = 0.0
    at_chance: bool = False
    diagnostic: str | None = None
    checkpoint: str | None = None
    checkpoint_id: str | None = None
    wall_clock: float = field(default=0.0, compare=False)
    state: ModelState | None = field(default=None, repr=False, compare=False)

    @property
    def collapsed(self) -> bool:
        return self.status == "collapsed"

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "metric": self.metric,
            "status": self.status,
            "epochs": [asdict(e) for e in self.epochs],
            "final_score": self.final_score,
            "parts": dict(self.parts),
            "baseline_score": self.baseline_score,
            "at_chance": self.at_chance,
            "diagnostic": self.diagnostic,
            "checkpoint": self.checkpoint,
            "checkpoint_id": self.checkpoint_id,
        }


def labeled(dataset: Dataset) -> Dataset:
    keep = tuple(ex for ex in dataset.examples if ex.target is not None)
    if not keep:
        raise InputError(f"dataset '{dataset.name}' has no labeled examples")
    return dataset.edit(examples=keep)


def batches(encodings, order: np.ndarray, batch_size: int, pad_id: int, pad_to: str, max_len: int):
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        yield idx, collate([encodings[i] for i in idx], pad_id, pad_to, max_len)  # type: ignore[arg-type]


def evaluate(
    state: ModelState,
    dataset: Dataset,
    tokenizer: TokenizerSpec,
    kind: str,
    max_len: int = 128,
    batch_size: int = 64,
    noise: NoiseSpec = NO_NOISE,
    dropout: DropoutSpec = DropoutSpec(),
    trace: PerturbationTrace | None = None,
):
    """
    Eval-mode predictions on `dataset` scored with `kind`. The run's noise and
    dropout settings are passed through so a trace can confirm that every hook
    was a no-op.
    """
    encodings = encode_dataset(tokenizer, dataset, max_len)
    outputs = []
    with no_grad():
        for _, batch in batches(encodings, np.arange(len(encodings)), batch_size, tokenizer.pad_id, "batch", max_len):
            out = classify(state, encode(state, batch, "eval", noise, dropout, None, trace)).data
            outputs.append(out if state.config.regression else np.argmax(out, axis=-1))
    predictions = np.concatenate(outputs)
    return metric(kind, predictions, dataset.targets())  # type: ignore[arg-type]


def _backbone(config: TrainRunConfig, vocab: int) -> ModelState:
    if config.checkpoint is not None:
        return load_checkpoint(config.checkpoint)
    model = config.model
    if model.vocab_size < vocab:
        raise InputError(f"model vocab_size {model.vocab_size} is smaller than the tokenizer's {vocab} tokens")
    return init_params(model, config.seed)


def finetune(
    config: TrainRunConfig,
    task: TaskData,
    tokenizer: TokenizerSpec,
    backbone: ModelState | None = None,
    out_dir: str | Path | None = None,
) -> RunRecord:
    """
    Train with perturbed (train-mode) forward passes, evaluate each epoch
    with clean (eval-mode) ones.

    A non-finite training loss stops the run and yields a `collapsed` record
    instead of raising. The run is a function of `config`, `task` and
    `backbone` only.
    """
    started = time.perf_counter()
    train, dev = labeled(task.train), labeled(task.dev)
    regression = train.kind == "regression"
    backbone = backbone or _backbone(config, len(tokenizer))
    if backbone.config.vocab_size < len(tokenizer):
        raise InputError(f"backbone vocab_size {backbone.config.vocab_size} does not cover {len(tokenizer)} tokens")
    state = attach_head(backbone, max(train.n_classes, 2), regression, config.seed)
    config.noise.validate_for(state.config.n_layers)
    max_len = min(config.max_len, state.config.max_seq_len)

    dropout = resolve_dropout(config.noise, config.dropout, config.combine)
    encodings = encode_dataset(tokenizer, train, max_len, config.pad_to)
    targets = train.targets()
    steps_per_epoch = math.ceil(len(train) / config.batch_size)
    total = config.epochs * steps_per_epoch
    warmup = config.warmup_steps if config.warmup_steps is not None else int(round(config.warmup_fraction * total))
    schedule = ScheduleSpec(config.peak_lr, min(warmup, total), total)
    optimizer = AdamW(state.params, config.betas, config.eps, config.weight_decay, config.decay_all)
    baseline = majority_baseline(task.metric, targets, dev.targets()).value * 100.0  # type: ignore[arg-type]

    label = f"{task.name}/{config.technique} lr={config.peak_lr:g} seed={config.seed}"
    epochs: list[EpochRecord] = []
    step = 0
    diagnostic = None
    result = None

    for epoch in range(1, config.epochs + 1):
        order = RngStream(config.seed, step=epoch, purpose="shuffle").generator().permutation(len(train))
        losses = []
        for idx, batch in batches(encodings, order, config.batch_size, tokenizer.pad_id, config.pad_to, max_len):
            rng = RngStream(config.seed, step=step, purpose="train")
            acts = encode(state, batch, "train", config.noise, dropout, rng)
            loss = task_loss(state, classify(state, acts), targets[idx])
            value = loss.item()
            if not math.isfinite(value):
                diagnostic = f"non-finite training loss {value} at epoch {epoch}, step {step + 1}"
                break
            optimizer.zero_grad()
            loss.backward()
            step += 1
            optimizer.step(lr_at(schedule, step))
            losses.append(value)
        if diagnostic is not None:
            logger.warning("%s collapsed: %s", label, diagnostic)
            break

        trace = PerturbationTrace()
        result = evaluate(state, dev, tokenizer, task.metric, max_len, noise=config.noise, dropout=dropout, trace=trace)
        if trace.nonzero():
            raise RunFailure(f"evaluation applied perturbations at {sorted(trace.nonzero())}")
        epochs.append(EpochRecord(epoch, float(np.mean(losses)), result.value * 100.0, result.degenerate))
        logger.info("%s epoch %d loss %.4f dev %.2f", label, epoch, epochs[-1].train_loss, epochs[-1].dev_score)

    checkpoint = checkpoint_id = None
    if out_dir is not None and diagnostic is None:
        path = Path(out_dir) / f"{task.name}.{config.technique}.lr{config.peak_lr:g}.seed{config.seed}.ckpt"
        checkpoint_id = save_checkpoint(state, path)
        checkpoint = path.name
    elif diagnostic is None:
        checkpoint_id = state.checksum()

    if diagnostic is not None:
        return RunRecord(
            config,
            task.metric,
            "collapsed",
            tuple(epochs),
            None,
            baseline_score=baseline,
            diagnostic=diagnostic,
            wall_clock=time.perf_counter() - started,
        )

    assert result is not None
    final = result.value * 100.0
    return RunRecord(
        config,
        task.metric,
        "completed",
        tuple(epochs),
        final,
        parts={k: v * 100.0 for k, v in result.parts.items()},
        baseline_score=baseline,
        at_chance=final <= baseline,
        checkpoint=checkpoint,
        checkpoint_id=checkpoint_id,
        wall_clock=time.perf_counter() - started,
        state=state,
    )


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=0))


@dataclass(frozen=True)
class GridAggregate:
    best_lr: float | None
    mean: float | None
    std: float | None
    n_seeds: int
    excluded: int = 0
    per_lr: dict[float, tuple[float, float, int]] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "best_lr": self.best_lr,
            "mean": self.mean,
            "std": self.std,
            "n_seeds": self.n_seeds,
            "excluded": self.excluded,
            "per_lr": {f"{lr:g}": {"mean": m, "std": s, "n": n} for lr, (m, s, n) in self.per_lr.items()},
        }


@dataclass(frozen=True)
class GridResult:
    records: tuple[RunRecord, ...]
    aggregate: GridAggregate


def aggregate(records: Sequence[RunRecord]) -> GridAggregate:
    """
    Best learning rate by seed-mean dev score (ties go to the smaller rate);
    collapsed runs are left out and counted in `excluded`.
    """
    per_lr: dict[float, tuple[float, float, int]] = {}
    by_lr: dict[float, list[float]] = {}
    for rec in sorted(records, key=lambda r: (r.config.peak_lr, r.config.seed)):
        by_lr.setdefault(rec.config.peak_lr, [])
        if not rec.collapsed and rec.final_score is not None:
            by_lr[rec.config.peak_lr].append(rec.final_score)
    best = None
    for lr in sorted(by_lr):
        if not by_lr[lr]:
            continue
        m, s = mean_std(by_lr[lr])
        per_lr[lr] = (m, s, len(by_lr[lr]))
        if best is None or m > per_lr[best][0]:
            best = lr
    excluded = sum(r.collapsed for r in records)
    if best is None:
        return GridAggregate(None, None, None, 0, excluded, per_lr)
    m, s, n = per_lr[best]
    return GridAggregate(best, m, s, n, excluded, per_lr)


def grid_search(
    base: TrainRunConfig,
    lrs: Sequence[float],
    seeds: Sequence[int],
    task: TaskData,
    tokenizer: TokenizerSpec,
    backbone: ModelState | None = None,
    out_dir: str | Path | None = None,
    threads: int = 1,
) -> GridResult:
    """
    Run every (lr, seed) cell, in parallel across `threads` workers. Records
    come back sorted by (lr, seed) whatever the completion order.
    """
    if not lrs or not seeds:
        raise InputError("grid search needs at least one learning rate and one seed")
    cells = [base.edit(peak_lr=float(lr), seed=int(seed)) for lr in sorted(set(lrs)) for seed in sorted(set(seeds))]

    records: list[RunRecord] = []

    def done(rec: RunRecord) -> None:
        outcome = rec.status if rec.collapsed else f"{rec.final_score:.2f}"
        logger.info("finished %s %s lr=%g seed=%d: %s", task.name, rec.config.technique, rec.config.peak_lr, rec.config.seed, outcome)
        records.append(rec)

    if threads <= 1:
        for cell in cells:
            done(finetune(cell, task, tokenizer, backbone, out_dir))
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(finetune, cell, task, tokenizer, backbone, out_dir) for cell in cells]
            for future in as_completed(futures):
                done(future.result())

    records.sort(key=lambda r: (r.config.peak_lr, r.config.seed))
    return GridResult(tuple(records), aggregate(records))
