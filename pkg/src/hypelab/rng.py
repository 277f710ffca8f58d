"""
Keyed random streams.

Every random draw in hypelab comes from a stream addressed by
(seed, step, layer, purpose). Streams are built on numpy's counter-based
Philox generator, so a key always reproduces the same samples and switching
one consumer on or off never shifts the draws of another.
"""

import zlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError


def purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass(frozen=True)
class RngStream:
    seed: int
    step: int = 0
    layer: int = 0
    purpose: str = "default"

    def __post_init__(self):
        if min(self.seed, self.step, self.layer) < 0:
            raise InputError(
                f"rng key parts must be non-negative, got seed={self.seed} step={self.step} layer={self.layer}"
            )

    def edit(self, **kwargs) -> "RngStream":
        return replace(self, **kwargs)

    @property
    def key(self) -> tuple[int, int, int, int]:
        return (self.seed, self.step, self.layer, purpose_code(self.purpose))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(self.key))))
