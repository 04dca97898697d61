"""Segment extraction from behavior streams and a uniform FIFO replay buffer."""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .errors import EmptyBufferError
from .learners import Segment
from .mdp import Transition

#: Buffer size used for the large-scale replay experiments.
DEFAULT_CAPACITY = 10_000


def segment_stream(stream: Sequence[Transition], n: int) -> list[Segment]:
    """Overlapping length-``n`` windows, one starting at every time step."""
    if n < 1:
        raise ValueError("n must be >= 1")
    stream = list(stream)
    if len(stream) < n:
        raise ValueError(f"stream of length {len(stream)} is shorter than n={n}")
    return [Segment(tuple(stream[t : t + n])) for t in range(len(stream) - n + 1)]


class ReplayBuffer:
    """Bounded FIFO of length-``n`` segments with uniform sampling.

    Parameters
    ----------
    capacity : int
        Maximum number of stored segments; the oldest is evicted first.
    n : int
        Required segment length.
    rng : numpy Generator or int
        Source of randomness for :meth:`sample_iid`.
    """

    def __init__(self, capacity: int, n: int, rng=None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.n = n
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.segments: deque[Segment] = deque(maxlen=capacity)

    def __len__(self):
        return len(self.segments)

    def push(self, seg: Segment) -> None:
        if seg.n != self.n:
            raise ValueError(f"segment length {seg.n} does not match buffer n={self.n}")
        self.segments.append(seg)

    def sample_iid(self, batch: int) -> list[Segment]:
        """``batch`` segments drawn uniformly with replacement."""
        if not self.segments:
            raise EmptyBufferError("cannot sample from an empty replay buffer")
        if batch < 0:
            raise ValueError("batch must be non-negative")
        if batch == 0:
            return []
        idx = self.rng.integers(0, len(self.segments), size=batch)
        return [self.segments[i] for i in idx]
