"""
Training-time Perturbations

Additive hidden-state noise (normal or uniform, scale sigma) at the
pre-layer and intra-layer hook points of the encoder, and inverted dropout
as its multiplicative 0/1 counterpart. Noise never carries a gradient of its
own: it enters the graph as a constant.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import InputError, UsageError
from .rng import RngStream
from .tensor import Tensor

logger = logging.getLogger(__name__)

NoiseForm = Literal["none", "normal", "uniform"]
Position = Literal["pre_layer", "intra_layer", "both"]
Site = Literal["pre_layer", "intra_layer"]
DropoutSite = Literal["pre_layer", "ffn_output"]
Mode = Literal["train", "eval"]

FORMS = ("none", "normal", "uniform")
POSITIONS = ("pre_layer", "intra_layer", "both")
MODES = ("train", "eval")


@dataclass(frozen=True)
class NoiseSpec:
    """
    Full hidden-state noise configuration.

    `layer_mask` holds 1-based indices of the layers whose inputs (or
    intra-layer states) receive noise; None means every layer.
    """

    form: NoiseForm = "none"
    sigma: float = 0.0
    position: Position = "pre_layer"
    layer_mask: frozenset[int] | None = None

    def __post_init__(self):
        if self.form not in FORMS:
            raise InputError(f"noise form must be one of {', '.join(FORMS)}, got '{self.form}'")
        if self.position not in POSITIONS:
            raise InputError(f"noise position must be one of {', '.join(POSITIONS)}, got '{self.position}'")
        if not self.sigma >= 0:
            raise InputError(f"noise sigma must be >= 0, got {self.sigma}")
        if self.layer_mask is not None:
            object.__setattr__(self, "layer_mask", frozenset(int(i) for i in self.layer_mask))

    @property
    def active(self) -> bool:
        return self.form != "none" and self.sigma > 0

    def validate_for(self, n_layers: int) -> None:
        if self.layer_mask is not None and not self.layer_mask <= set(range(1, n_layers + 1)):
            raise InputError(
                f"layer mask {sorted(self.layer_mask)} is not a subset of layers 1..{n_layers}"
            )

    def covers(self, layer_index: int, site: Site) -> bool:
        if not self.active:
            return False
        if self.position != "both" and self.position != site:
            return False
        return self.layer_mask is None or layer_index in self.layer_mask


NO_NOISE = NoiseSpec()


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise InputError(f"dropout rate must lie in [0, 1), got {self.rate}")


@dataclass
class PerturbationTrace:
    """
    Max absolute change applied at each hook, keyed by (layer, site, kind).

    Hooks that ran as a no-op are recorded with 0.0, so a trace also lists
    which hook points were visited.
    """

    deltas: dict[tuple[int, str, str], float] = field(default_factory=dict)

    def record(self, layer: int, site: str, kind: str, before: np.ndarray, after: np.ndarray):
        delta = float(np.max(np.abs(after - before))) if before.size else 0.0
        key = (layer, site, kind)
        self.deltas[key] = max(self.deltas.get(key, 0.0), delta)

    def nonzero(self) -> dict[tuple[int, str, str], float]:
        return {k: v for k, v in self.deltas.items() if v != 0.0}


def sample_noise(shape: tuple[int, ...], spec: NoiseSpec, rng: RngStream) -> Tensor:
    """
    Draw i.i.d. noise of the given shape; the result is detached from any graph.
    """
    if spec.form == "none":
        raise UsageError("sample_noise called with form 'none'")
    gen = rng.generator()
    if spec.form == "normal":
        values = gen.normal(0.0, spec.sigma, size=shape)
    else:
        values = gen.uniform(-spec.sigma, spec.sigma, size=shape)
    return Tensor(values, requires_grad=False)


def apply_perturbation(
    h: Tensor,
    layer_index: int,
    site: Site,
    spec: NoiseSpec,
    mode: Mode,
    rng: RngStream | None,
    trace: PerturbationTrace | None = None,
) -> Tensor:
    """
    Return `h + eps` when training at a covered (layer, site), else `h` itself.

    `rng` is the step-level stream; the draw is keyed by this layer and site so
    masking a layer never changes the noise another layer receives.
    """
    out = h
    if mode == "train" and spec.covers(layer_index, site):
        if rng is None:
            raise UsageError("training-mode perturbation needs an rng stream")
        eps = sample_noise(h.shape, spec, rng.edit(layer=layer_index, purpose=f"noise:{site}"))
        out = h + eps
    if trace is not None:
        trace.record(layer_index, site, "noise", h.data, out.data)
    return out


def apply_dropout(
    h: Tensor,
    spec: DropoutSpec,
    mode: Mode,
    rng: RngStream | None,
    layer_index: int = 0,
    site: DropoutSite = "pre_layer",
    trace: PerturbationTrace | None = None,
) -> Tensor:
    """
    Inverted dropout: keep each entry with probability 1 - rate and rescale by
    1 / (1 - rate) in train mode; identity in eval mode or at rate 0.
    """
    out = h
    if mode == "train" and spec.rate > 0:
        if rng is None:
            raise UsageError("training-mode dropout needs an rng stream")
        gen = rng.edit(layer=layer_index, purpose=f"dropout:{site}").generator()
        keep = gen.random(h.shape) >= spec.rate
        out = h * Tensor(keep / (1.0 - spec.rate))
    if trace is not None:
        trace.record(layer_index, site, "dropout", h.data, out.data)
    return out


def resolve_dropout(noise: NoiseSpec, dropout: DropoutSpec, combine: bool = False) -> DropoutSpec:
    """
    Noise and dropout are exclusive unless `combine` is set: with active
    noise the dropout rate is forced to 0.
    """
    if noise.active and dropout.rate > 0 and not combine:
        logger.debug("hidden-state noise active, dropout %.3g disabled", dropout.rate)
        return DropoutSpec(0.0)
    return dropout


@dataclass(frozen=True)
class Technique:
    name: str
    noise: NoiseSpec
    dropout: DropoutSpec
    combine: bool = False

    def effective_dropout(self) -> DropoutSpec:
        return resolve_dropout(self.noise, self.dropout, self.combine)


VANILLA_DROPOUT = 0.1
DEFAULT_SIGMA = 1e-5

_BASES = {
    "vanilla": ("none", VANILLA_DROPOUT),
    "plain": ("none", 0.0),
    "hype-n": ("normal", 0.0),
    "hype-u": ("uniform", 0.0),
    "dropout-only": ("none", VANILLA_DROPOUT),
}

_TECHNIQUE = re.compile(
    r"^(?P<base>[a-z\-]+?)(?P<dp>\+dp)?(?P<mods>(?::[a-z]+\d*)*)(?:@(?P<sigma>[0-9.]+(?:[eE][+-]?\d+)?))?$"
)


def technique(name: str, n_layers: int, sigma: float = DEFAULT_SIGMA) -> Technique:
    """
    Resolve a technique name into noise and dropout settings.

    Grammar: base[+dp][:modifier...][@sigma] with base one of vanilla, plain,
    hype-n, hype-u and modifiers pre, intra, both (position) or upper, lower,
    upperK, lowerK (layer subset; bare upper/lower mean half the layers).
    """
    m = _TECHNIQUE.match(name.strip())
    if not m or m.group("base") not in _BASES:
        raise InputError(f"unknown technique '{name}'")
    form, rate = _BASES[m.group("base")]
    if m.group("sigma") is not None:
        if form == "none":
            raise InputError(f"technique '{name}' has no noise to scale")
        sigma = float(m.group("sigma"))

    position: Position = "pre_layer"
    mask: frozenset[int] | None = None
    for mod in filter(None, m.group("mods").split(":")):
        if mod in ("pre", "intra", "both"):
            position = {"pre": "pre_layer", "intra": "intra_layer", "both": "both"}[mod]  # type: ignore[assignment]
            continue
        sub = re.fullmatch(r"(upper|lower)(\d*)", mod)
        if not sub:
            raise InputError(f"unknown technique modifier '{mod}' in '{name}'")
        k = int(sub.group(2)) if sub.group(2) else n_layers // 2
        if not 1 <= k <= n_layers:
            raise InputError(f"technique '{name}' selects {k} of {n_layers} layers")
        layers = range(n_layers - k + 1, n_layers + 1) if sub.group(1) == "upper" else range(1, k + 1)
        mask = frozenset(layers)

    if m.group("dp"):
        rate = VANILLA_DROPOUT
    noise = NoiseSpec(form, sigma if form != "none" else 0.0, position, mask)  # type: ignore[arg-type]
    return Technique(name, noise, DropoutSpec(rate), combine=bool(m.group("dp")))
