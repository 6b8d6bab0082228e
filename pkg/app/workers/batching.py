from typing import Iterator, Sequence, Tuple

import numpy as np

from app.core.exceptions import ConfigurationError
from app.scenegen.render import SceneSample
from app.schemas.common import Domain


class EpochShuffler:
    """Recorre índices en un orden aleatorio nuevo por época"""

    def __init__(self, size: int, rng: np.random.Generator):
        if size <= 0:
            raise ConfigurationError("No se puede armar lotes de una secuencia vacía")
        self.size = size
        self.rng = rng
        self.epoch = 0
        self._order = self.rng.permutation(size)
        self._position = 0

    def next_index(self) -> int:
        if self._position == self.size:
            self._order = self.rng.permutation(self.size)
            self._position = 0
            self.epoch += 1
        index = int(self._order[self._position])
        self._position += 1
        return index


class PairedBatcher:
    """Una imagen fuente y una objetivo por paso"""

    def __init__(self, source: Sequence[SceneSample], target: Sequence[SceneSample], seed: int = 0):
        self.source = source
        self.target = target
        self._source_order = EpochShuffler(len(source), np.random.default_rng([seed, 3, Domain.SOURCE.label]))
        self._target_order = EpochShuffler(len(target), np.random.default_rng([seed, 3, Domain.TARGET.label]))

    def __iter__(self) -> "PairedBatcher":
        return self

    def __next__(self) -> Tuple[SceneSample, SceneSample]:
        return (
            self.source[self._source_order.next_index()],
            self.target[self._target_order.next_index()],
        )


def make_batch(
    source_stream: Sequence[SceneSample],
    target_stream: Sequence[SceneSample],
    seed: int = 0,
) -> Iterator[Tuple[SceneSample, SceneSample]]:
    return PairedBatcher(source_stream, target_stream, seed)
