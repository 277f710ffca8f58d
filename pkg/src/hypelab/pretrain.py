"""
Masked-token pretraining on the synthetic corpus.

Produces the backbone checkpoint that fine-tuning starts from. 15% of the
non-special positions of every sequence are selected; of those, 80% are
replaced by [MASK], 10% by a random token and 10% kept, and the encoder is
trained to recover the originals through a separate output projection that
is discarded afterwards.
"""

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import functional as F
from .classes import Batch
from .data import Example, TokenizerSpec, collate, tokenize
from .errors import InputError
from .model import ModelConfig, ModelState, encode, init_params
from .optim import AdamW, ScheduleSpec, lr_at
from .perturb import DropoutSpec
from .rng import RngStream
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

IGNORE = -1


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 400
    batch_size: int = 32
    lr: float = 1e-3
    warmup_fraction: float = 0.1
    mask_prob: float = 0.15
    dropout: float = 0.1
    max_len: int = 32
    holdout: int = 256

    def __post_init__(self):
        if self.steps < 0:
            raise InputError(f"pretraining steps must be >= 0, got {self.steps}")
        if not 0.0 < self.mask_prob < 1.0:
            raise InputError(f"mask probability must lie in (0, 1), got {self.mask_prob}")
        if self.batch_size < 1 or self.max_len < 3:
            raise InputError("pretraining needs batch_size >= 1 and max_len >= 3")


def mask_tokens(
    input_ids: np.ndarray,
    attention_mask: np.ndarray,
    tokenizer: TokenizerSpec,
    mask_prob: float,
    gen: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Returns (corrupted ids, labels); labels hold the original id at selected
    positions and IGNORE elsewhere. At least one position is always selected.
    """
    ids = input_ids.copy()
    special = np.isin(ids, list(tokenizer.special_ids)) | (attention_mask == 0)
    selected = (gen.random(ids.shape) < mask_prob) & ~special
    if not selected.any():
        candidates = np.argwhere(~special)
        if len(candidates) == 0:
            raise InputError("no maskable positions in batch")
        row, col = candidates[gen.integers(len(candidates))]
        selected[row, col] = True

    labels = np.where(selected, ids, IGNORE)
    roll = gen.random(ids.shape)
    ids[selected & (roll < 0.8)] = tokenizer.mask_id
    swap = selected & (roll >= 0.8) & (roll < 0.9)
    ordinary = np.setdiff1d(np.arange(len(tokenizer)), sorted(tokenizer.special_ids))
    ids[swap] = gen.choice(ordinary, size=int(swap.sum()))
    return ids, labels


class Pretrainer:
    """
    Args:
        config: Architecture of the backbone to pretrain
        corpus: Sentences, one example each
        tokenizer: Vocabulary for the corpus
        options: Optimization settings
        seed: Key for initialization, batch order, masking and dropout
    """

    def __init__(
        self,
        config: ModelConfig,
        corpus: Sequence[str],
        tokenizer: TokenizerSpec,
        options: PretrainConfig = PretrainConfig(),
        seed: int = 0,
    ):
        if config.vocab_size < len(tokenizer):
            raise InputError(f"vocab_size {config.vocab_size} is smaller than the tokenizer's {len(tokenizer)} tokens")
        if len(corpus) <= options.holdout:
            raise InputError(f"corpus of {len(corpus)} sentences leaves nothing after the {options.holdout} held out")
        self.config = config
        self.tokenizer = tokenizer
        self.options = options
        self.seed = seed
        encodings = [tokenize(tokenizer, Example(s), max_len=min(options.max_len, config.max_seq_len), pad=False) for s in corpus]
        self.heldout = encodings[: options.holdout]
        self.train = encodings[options.holdout :]
        self.state = init_params(config, seed)
        gen = RngStream(seed, purpose="init:mlm.weight").generator()
        self.mlm = {
            "mlm.weight": Tensor(gen.normal(0.0, 0.02, size=(config.d_model, config.vocab_size)), requires_grad=True, name="mlm.weight"),
            "mlm.bias": Tensor(np.zeros(config.vocab_size), requires_grad=True, name="mlm.bias"),
        }
        self.history: list[float] = []
        self.initial_loss: float | None = None
        self.final_loss: float | None = None

    def _batch(self, encodings) -> Batch:
        return collate(encodings, self.tokenizer.pad_id)

    def mlm_loss(self, batch: Batch, labels: np.ndarray, train: bool, rng: RngStream | None = None) -> Tensor:
        dropout = DropoutSpec(self.options.dropout if train else 0.0)
        acts = encode(self.state, batch, mode="train" if train else "eval", dropout=dropout, rng=rng)
        B, T, D = acts.hidden[-1].shape
        positions = np.flatnonzero(labels.reshape(-1) != IGNORE)
        picked = acts.hidden[-1].reshape(B * T, D)[positions]
        logits = picked @ self.mlm["mlm.weight"] + self.mlm["mlm.bias"]
        return F.cross_entropy(logits, labels.reshape(-1)[positions])

    def heldout_loss(self) -> float:
        batch = self._batch(self.heldout)
        gen = RngStream(self.seed, purpose="pretrain:heldout").generator()
        ids, labels = mask_tokens(batch.input_ids, batch.attention_mask, self.tokenizer, self.options.mask_prob, gen)
        with no_grad():
            return self.mlm_loss(Batch(ids, batch.attention_mask, batch.segment_ids), labels, train=False).item()

    def run(self) -> ModelState:
        opts = self.options
        if opts.steps == 0:
            return self.state
        schedule = ScheduleSpec(opts.lr, int(opts.warmup_fraction * opts.steps), opts.steps)
        params = {**self.state.parameters(include_head=False), **self.mlm}
        optimizer = AdamW(params)
        self.initial_loss = self.heldout_loss()
        logger.info("pretraining %d steps, held-out loss at init %.4f", opts.steps, self.initial_loss)

        for step in range(opts.steps):
            gen = RngStream(self.seed, step=step, purpose="pretrain:batch").generator()
            chosen = gen.choice(len(self.train), size=min(opts.batch_size, len(self.train)), replace=False)
            batch = self._batch([self.train[i] for i in chosen])
            ids, labels = mask_tokens(batch.input_ids, batch.attention_mask, self.tokenizer, opts.mask_prob, gen)
            loss = self.mlm_loss(
                Batch(ids, batch.attention_mask, batch.segment_ids),
                labels,
                train=True,
                rng=RngStream(self.seed, step=step, purpose="pretrain"),
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr_at(schedule, step + 1))
            self.history.append(loss.item())
            if (step + 1) % max(1, opts.steps // 10) == 0:
                logger.info("pretrain step %d/%d loss %.4f", step + 1, opts.steps, loss.item())

        self.final_loss = self.heldout_loss()
        logger.info("held-out loss after pretraining %.4f", self.final_loss)
        return self.state


def pretrain_synthetic(
    config: ModelConfig,
    corpus: Sequence[str],
    steps: int,
    seed: int = 0,
    tokenizer: TokenizerSpec | None = None,
    options: PretrainConfig | None = None,
) -> ModelState:
    """
    Masked-token pretraining for `steps` optimizer steps; 0 steps returns the
    initialization unchanged.
    """
    if tokenizer is None:
        tokenizer = TokenizerSpec.build(w for s in corpus for w in s.split())
    options = replace(options or PretrainConfig(), steps=steps)
    if steps == 0:
        return init_params(config, seed)
    return Pretrainer(config, corpus, tokenizer, options, seed).run()
