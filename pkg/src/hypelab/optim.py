"""
AdamW and the linear warm-up / linear decay learning-rate schedule.
"""

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import DimensionError, InputError, UsageError


@dataclass(frozen=True)
class ScheduleSpec:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not self.peak_lr > 0:
            raise InputError(f"peak learning rate must be positive, got {self.peak_lr}")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise InputError(
                f"need 0 <= warmup_steps <= total_steps, got {self.warmup_steps} and {self.total_steps}"
            )


def lr_at(spec: ScheduleSpec, step: int) -> float:
    """
    Linear ramp 0 -> peak over the warm-up steps, then linear decay to 0 at
    `total_steps`.
    """
    if not 0 <= step <= spec.total_steps:
        raise UsageError(f"step {step} outside schedule range [0, {spec.total_steps}]")
    if spec.warmup_steps and step <= spec.warmup_steps:
        return spec.peak_lr * (step / spec.warmup_steps)
    if spec.total_steps == spec.warmup_steps:
        return spec.peak_lr
    return spec.peak_lr * ((spec.total_steps - step) / (spec.total_steps - spec.warmup_steps))


def decays(name: str) -> bool:
    """Layer-norm affines and biases are excluded from weight decay."""
    return not (name.endswith(".bias") or ".norm." in name)


@dataclass
class OptimizerState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-5
    weight_decay: float = 0.1

    @classmethod
    def init(cls, params: Mapping[str, np.ndarray], **hyper) -> "OptimizerState":
        return cls(
            t=0,
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: OptimizerState,
    lr: float,
    decay_mask: Mapping[str, bool] | None = None,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """
    One bias-corrected Adam update with decoupled weight decay.

    Returns new parameter arrays and a new state; the inputs are not modified.
    A missing gradient counts as zero.
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DimensionError(
                f"'{name}': gradient shape {list(g.shape)} does not match parameter shape {list(p.shape)}"
            )
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        update = m_hat / (np.sqrt(v_hat) + state.eps)
        wd = state.weight_decay if decay_mask is None or decay_mask.get(name, True) else 0.0
        new_params[name] = p - lr * update - lr * wd * p
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(t, new_m, new_v, b1, b2, state.eps, state.weight_decay)


class AdamW:
    """
    Stateful wrapper applying `adamw_step` to a dict of parameter tensors.

    Args:
        params: name -> Tensor, updated in place
        decay_all: Decay layer-norm affines and biases too
    """

    def __init__(
        self,
        params,
        betas: tuple[float, float] = (0.9, 0.99),
        eps: float = 1e-5,
        weight_decay: float = 0.1,
        decay_all: bool = False,
    ):
        self.params = dict(params)
        self.decay_mask = {name: decay_all or decays(name) for name in self.params}
        self.state = OptimizerState.init(
            {k: t.data for k, t in self.params.items()},
            beta1=betas[0],
            beta2=betas[1],
            eps=eps,
            weight_decay=weight_decay,
        )

    def step(self, lr: float) -> None:
        arrays = {k: t.data for k, t in self.params.items()}
        grads = {k: t.grad for k, t in self.params.items()}
        updated, self.state = adamw_step(arrays, grads, self.state, lr, self.decay_mask)
        for name, tensor in self.params.items():
            tensor.data = updated[name]

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.grad = None
