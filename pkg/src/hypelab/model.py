"""
Transformer Encoder

A post-layer-norm encoder in the BERT family: token + position + segment
embeddings, `n_layers` blocks of multi-head self-attention and a GELU
feed-forward network, and a linear head on the first token's final hidden
state.

Every block exposes two hook points for training-time perturbations: the
block input (pre-layer, also where dropout acts) and the state between the
attention and feed-forward sublayers (intra-layer). Dropout additionally acts
on the feed-forward output.
"""

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Literal

import numpy as np

from . import functional as F
from .classes import Batch
from .errors import InputError
from .perturb import (
    NO_NOISE,
    DropoutSpec,
    Mode,
    NoiseSpec,
    PerturbationTrace,
    apply_dropout,
    apply_perturbation,
)
from .rng import RngStream
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)

INIT_STD = 0.02
MASK_BIAS = -1e9

# name -> (n_layers, d_model, n_heads, d_ff)
PRESETS = {
    "tiny": (2, 32, 2, 128),
    "small": (4, 64, 4, 256),
    "base": (6, 96, 6, 384),
    "large": (8, 128, 8, 512),
}


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 4
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = 512
    max_seq_len: int = 128
    n_classes: int = 2
    regression: bool = False
    n_segments: int = 2
    ln_eps: float = 1e-12

    def __post_init__(self):
        for name in ("n_layers", "d_model", "n_heads", "d_ff", "vocab_size", "max_seq_len", "n_segments"):
            if getattr(self, name) < 1:
                raise InputError(f"model {name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise InputError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not self.regression and self.n_classes < 2:
            raise InputError(f"a classifier needs at least 2 classes, got {self.n_classes}")
        if not self.ln_eps > 0:
            raise InputError(f"ln_eps must be positive, got {self.ln_eps}")

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        if name not in PRESETS:
            raise InputError(f"unknown model preset '{name}', expected one of {', '.join(PRESETS)}")
        n_layers, d_model, n_heads, d_ff = PRESETS[name]
        values: dict[str, Any] = dict(n_layers=n_layers, d_model=d_model, n_heads=n_heads, d_ff=d_ff)
        values.update(overrides)
        return cls(**values)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def out_dim(self) -> int:
        return 1 if self.regression else self.n_classes

    def edit(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown model config field '{sorted(unknown)[0]}'")
        return cls(**data)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes in declaration order."""
    D, FF = config.d_model, config.d_ff
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.token": (config.vocab_size, D),
        "embeddings.position": (config.max_seq_len, D),
        "embeddings.segment": (config.n_segments, D),
        "embeddings.norm.gain": (D,),
        "embeddings.norm.bias": (D,),
    }
    for i in range(1, config.n_layers + 1):
        p = f"layer.{i}"
        for proj in ("query", "key", "value", "output"):
            shapes[f"{p}.attention.{proj}.weight"] = (D, D)
            shapes[f"{p}.attention.{proj}.bias"] = (D,)
        shapes[f"{p}.attention.norm.gain"] = (D,)
        shapes[f"{p}.attention.norm.bias"] = (D,)
        shapes[f"{p}.ffn.in.weight"] = (D, FF)
        shapes[f"{p}.ffn.in.bias"] = (FF,)
        shapes[f"{p}.ffn.out.weight"] = (FF, D)
        shapes[f"{p}.ffn.out.bias"] = (D,)
        shapes[f"{p}.ffn.norm.gain"] = (D,)
        shapes[f"{p}.ffn.norm.bias"] = (D,)
    shapes["head.weight"] = (D, config.out_dim)
    shapes["head.bias"] = (config.out_dim,)
    return shapes


def group_of(name: str) -> str:
    if name.startswith("layer."):
        return ".".join(name.split(".")[:2])
    return name.split(".")[0]


@dataclass
class ModelState:
    """
    Encoder parameters theta (embeddings and layer.1 .. layer.n) plus the
    head psi, keyed by name in declaration order.
    """

    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def groups(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for name in self.params:
            out.setdefault(group_of(name), []).append(name)
        return out

    def parameters(self, include_head: bool = True) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if include_head or group_of(k) != "head"}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def checksum(self, include_head: bool = True) -> str:
        h = hashlib.sha256()
        for name, t in self.parameters(include_head).items():
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return h.hexdigest()

    def copy(self) -> "ModelState":
        return ModelState(
            self.config,
            {k: Tensor(t.data.copy(), requires_grad=t.requires_grad, name=k) for k, t in self.params.items()},
        )

    def freeze(self, include_head: bool = False) -> None:
        for name, t in self.params.items():
            if include_head or group_of(name) != "head":
                t.requires_grad = False


def _draw(name: str, shape: tuple[int, ...], seed: int) -> np.ndarray:
    if name.endswith(".gain"):
        return np.ones(shape)
    if name.endswith(".bias"):
        return np.zeros(shape)
    return RngStream(seed, purpose=f"init:{name}").generator().normal(0.0, INIT_STD, size=shape)


def init_params(config: ModelConfig, seed: int = 0) -> ModelState:
    """
    Deterministic initialization: weights and embeddings ~ N(0, 0.02^2),
    biases 0, layer-norm gains 1. Each parameter has its own keyed stream.
    """
    return ModelState(
        config,
        {name: Tensor(_draw(name, shape, seed), requires_grad=True, name=name) for name, shape in param_shapes(config).items()},
    )


def attach_head(state: ModelState, n_classes: int = 2, regression: bool = False, seed: int = 0) -> ModelState:
    """
    Copy of `state` with a freshly initialized head for a new task.
    """
    config = state.config.edit(n_classes=n_classes, regression=regression)
    shapes = param_shapes(config)
    params = {k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in state.params.items() if group_of(k) != "head"}
    for name in ("head.weight", "head.bias"):
        params[name] = Tensor(_draw(name, shapes[name], seed), requires_grad=True, name=name)
    return ModelState(config, params)


@dataclass
class LayerActivations:
    """
    Hidden states h^1 .. h^{n+1}: `hidden[0]` is the embedding output and
    `hidden[i]` the output of layer i. `pooled` is the first-token slice of
    the last entry.
    """

    hidden: list[Tensor]
    pooled: Tensor
    attention_mask: np.ndarray

    @property
    def n_layers(self) -> int:
        return len(self.hidden) - 1


def _linear(state: ModelState, prefix: str, x: Tensor) -> Tensor:
    return x @ state[f"{prefix}.weight"] + state[f"{prefix}.bias"]


def _norm(state: ModelState, prefix: str, x: Tensor) -> Tensor:
    return F.layer_norm(x, state[f"{prefix}.gain"], state[f"{prefix}.bias"], eps=state.config.ln_eps)


def attention(state: ModelState, layer_index: int, x: Tensor, mask_bias: np.ndarray) -> Tensor:
    """Multi-head scaled dot-product self-attention of one layer."""
    B, T, D = x.shape
    H, dh = state.config.n_heads, state.config.head_dim
    p = f"layer.{layer_index}.attention"

    def heads(t: Tensor) -> Tensor:
        return t.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

    q = heads(_linear(state, f"{p}.query", x))
    k = heads(_linear(state, f"{p}.key", x))
    v = heads(_linear(state, f"{p}.value", x))
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh)) + mask_bias
    context = F.softmax(scores, axis=-1) @ v
    return _linear(state, f"{p}.output", context.transpose(0, 2, 1, 3).reshape(B, T, D))


def feed_forward(state: ModelState, layer_index: int, x: Tensor) -> Tensor:
    p = f"layer.{layer_index}.ffn"
    return _linear(state, f"{p}.out", F.gelu(_linear(state, f"{p}.in", x)))


def apply_layer(
    state: ModelState,
    layer_index: int,
    h: Tensor,
    mask_bias: np.ndarray,
    mode: Mode = "eval",
    noise: NoiseSpec = NO_NOISE,
    dropout: DropoutSpec = DropoutSpec(),
    rng: RngStream | None = None,
    trace: PerturbationTrace | None = None,
) -> Tensor:
    """
    One transformer block with its hooks:

        x = dropout(h + eps_pre)
        x = norm(x + attention(x)) + eps_intra
        out = norm(x + dropout(ffn(x)))
    """
    x = apply_perturbation(h, layer_index, "pre_layer", noise, mode, rng, trace)
    x = apply_dropout(x, dropout, mode, rng, layer_index, "pre_layer", trace)
    x = _norm(state, f"layer.{layer_index}.attention.norm", x + attention(state, layer_index, x, mask_bias))
    x = apply_perturbation(x, layer_index, "intra_layer", noise, mode, rng, trace)
    f = apply_dropout(feed_forward(state, layer_index, x), dropout, mode, rng, layer_index, "ffn_output", trace)
    return _norm(state, f"layer.{layer_index}.ffn.norm", x + f)


def _as_batch(token_ids: Batch | np.ndarray) -> Batch:
    if isinstance(token_ids, Batch):
        return token_ids
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    return Batch(ids, np.ones_like(ids), np.zeros_like(ids))


def mask_bias(attention_mask: np.ndarray) -> np.ndarray:
    return ((1.0 - np.asarray(attention_mask, dtype=np.float64)) * MASK_BIAS)[:, None, None, :]


def embed(state: ModelState, batch: Batch) -> Tensor:
    """h^1: normalized sum of token, position and segment embeddings."""
    T = batch.shape[1]
    x = (
        F.embedding(state["embeddings.token"], batch.input_ids)
        + state["embeddings.position"][:T]
        + F.embedding(state["embeddings.segment"], batch.segment_ids)
    )
    return _norm(state, "embeddings.norm", x)


def encode(
    state: ModelState,
    token_ids: Batch | np.ndarray,
    mode: Mode = "eval",
    noise: NoiseSpec = NO_NOISE,
    dropout: DropoutSpec = DropoutSpec(),
    rng: RngStream | None = None,
    trace: PerturbationTrace | None = None,
) -> LayerActivations:
    """
    Run the encoder and return every layer's (unperturbed) input and output.

    In train mode each layer's input is perturbed per `noise` and `dropout`
    before the layer consumes it, the embedding output included. In eval mode
    both are the identity.
    """
    batch = _as_batch(token_ids)
    cfg = state.config
    if batch.input_ids.ndim != 2:
        raise InputError(f"token ids must be [batch, seq], got shape {list(batch.input_ids.shape)}")
    if batch.shape[1] > cfg.max_seq_len:
        raise InputError(f"sequence of length {batch.shape[1]} exceeds max_seq_len {cfg.max_seq_len}")
    if mode not in ("train", "eval"):
        raise InputError(f"mode must be 'train' or 'eval', got '{mode}'")
    noise.validate_for(cfg.n_layers)

    bias = mask_bias(batch.attention_mask)
    hidden = [embed(state, batch)]
    for i in range(1, cfg.n_layers + 1):
        hidden.append(apply_layer(state, i, hidden[-1], bias, mode, noise, dropout, rng, trace))
    return LayerActivations(hidden, hidden[-1][:, 0, :], batch.attention_mask)


def classify(state: ModelState, activations: LayerActivations) -> Tensor:
    """
    Head on the pooled first-token state: logits [batch, classes], or scores
    [batch] for regression.
    """
    out = _linear(state, "head", activations.pooled)
    if state.config.regression:
        return out.reshape(out.shape[0])
    return out


def task_loss(state: ModelState, outputs: Tensor, targets: np.ndarray) -> Tensor:
    if state.config.regression:
        return F.mse(outputs, np.asarray(targets, dtype=np.float64))
    return F.cross_entropy(outputs, np.asarray(targets))


def predict(state: ModelState, batch: Batch) -> np.ndarray:
    """Clean (eval-mode) predictions: class indices or regression scores."""
    with no_grad():
        out = classify(state, encode(state, batch, mode="eval")).data
    if state.config.regression:
        return out.copy()
    return np.argmax(out, axis=-1)


PoolMode = Literal["first", "mean"]


def pool(h: Tensor | np.ndarray, attention_mask: np.ndarray, mode: PoolMode = "first") -> np.ndarray:
    data = h.data if isinstance(h, Tensor) else np.asarray(h)
    if mode == "first":
        return data[:, 0, :].copy()
    mask = np.asarray(attention_mask, dtype=np.float64)[:, :, None]
    return (data * mask).sum(axis=1) / np.maximum(mask.sum(axis=1), 1.0)
