"""Alternating-corpus batch schedule

Every mini-batch comes from exactly one corpus. Corpora are interleaved by
smooth weighted round-robin with weights proportional to corpus size, so a
corpus holding three quarters of the clips supplies exactly three of every
four batches, spread as evenly as possible. Ties go to the lower index.
"""

import logging
from functools import reduce
from math import gcd
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..corpus.dataset import Batch, Corpus
from ..errors import CorpusError

logger = logging.getLogger(__name__)


class AgdSchedule:
    """Maps a global step to ``(corpus index, draw index within that corpus)``"""

    def __init__(self, sizes: Sequence[int]):
        sizes = [int(s) for s in sizes]
        if not sizes or not any(sizes):
            raise CorpusError("alternating schedule needs at least one non-empty corpus")
        if min(sizes) < 0:
            raise CorpusError("corpus sizes must be non-negative")
        common = reduce(gcd, [s for s in sizes if s])
        self.sizes = sizes
        self.weights = [s // common for s in sizes]
        self.cycle = self._build_cycle(self.weights)
        counts = np.zeros((len(self.cycle) + 1, len(sizes)), dtype=np.int64)
        for i, corpus in enumerate(self.cycle):
            counts[i + 1] = counts[i]
            counts[i + 1, corpus] += 1
        self._prefix = counts

    @staticmethod
    def _build_cycle(weights: Sequence[int]) -> List[int]:
        total = sum(weights)
        current = [0] * len(weights)
        cycle: List[int] = []
        for _ in range(total):
            for i, w in enumerate(weights):
                current[i] += w
            chosen = max(range(len(weights)), key=lambda i: (current[i], -i))
            current[chosen] -= total
            cycle.append(chosen)
        return cycle

    @property
    def period(self) -> int:
        return len(self.cycle)

    def corpus_at(self, step: int) -> int:
        return self.cycle[step % self.period]

    def assign(self, step: int) -> Tuple[int, int]:
        """Corpus for ``step`` and how many batches that corpus supplied before it"""
        if step < 0:
            raise ValueError(f"step must be non-negative, got {step}")
        laps, offset = divmod(step, self.period)
        corpus = self.cycle[offset]
        draw = laps * int(self._prefix[-1, corpus]) + int(self._prefix[offset, corpus])
        return corpus, draw

    def counts(self, steps: int) -> List[int]:
        """Batches per corpus over the first ``steps`` steps"""
        laps, offset = divmod(steps, self.period)
        return [int(v) for v in laps * self._prefix[-1] + self._prefix[offset]]


def agd_next_batch(
    corpora: Sequence[Corpus],
    step: int,
    seed: int,
    batch_size: int,
    schedule: Optional[AgdSchedule] = None,
) -> Tuple[int, Batch]:
    """Batch for global ``step``: drawn wholly from one corpus"""
    schedule = schedule or AgdSchedule([len(c) for c in corpora])
    index, draw = schedule.assign(step)
    return index, corpora[index].batch(draw, batch_size, seed)
