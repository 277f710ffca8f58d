from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class Encoding:
    input_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]
    segment_ids: tuple[int, ...]

    def __len__(self):
        return len(self.input_ids)


@dataclass
class Batch:
    input_ids: np.ndarray
    attention_mask: np.ndarray
    segment_ids: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.input_ids.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class MetricResult:
    kind: str
    value: float
    parts: dict[str, float] = field(default_factory=dict)
    degenerate: bool = False

    def edit(self, **kwargs):
        return replace(self, **kwargs)
