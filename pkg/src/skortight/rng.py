"""Counter-based Gaussian streams.

Every draw is a pure function of ``(seed, stream_index, sample, slot)``: the
Philox key is built from the seed and stream index, and the counter is the
sample index times a fixed block count. Sample ``i`` therefore gets the same
numbers no matter how the sample range is chunked or how many workers run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence, TypeVar

import numpy as np
from scipy.special import ndtri

T = TypeVar("T")

_MASK64 = (1 << 64) - 1
THREADS_ENV = "SKORTIGHT_THREADS"
CHUNK = 4096


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")

    def child(self, index: int) -> "RngStream":
        """A stream derived from this one; distinct indices never collide."""
        return RngStream(self.seed, (self.stream_index << 16) + 1 + index)

    def normals(self, start: int, count: int, width: int) -> np.ndarray:
        """Standard normals for samples ``start .. start+count-1``.

        Returns an array of shape ``(count, width)``. Row ``j`` depends only on
        ``start + j`` (and the stream), never on ``start`` or ``count`` alone.
        """
        if count <= 0:
            return np.empty((0, width))
        blocks = -(-width // 4)
        key = [self.seed & _MASK64, self.stream_index & _MASK64]
        bitgen = np.random.Philox(key=key, counter=[start * blocks, 0, 0, 0])
        raw = bitgen.random_raw(count * blocks * 4).reshape(count, blocks * 4)
        raw = raw[:, :width]
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return ndtri(u)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def chunk_bounds(n: int, chunk: int = CHUNK) -> list[tuple[int, int]]:
    return [(a, min(a + chunk, n)) for a in range(0, n, chunk)]


def map_chunks(
    fn: Callable[[int, int], T],
    n: int,
    threads: int | None = None,
    chunk: int = CHUNK,
) -> list[T]:
    """Apply ``fn(start, stop)`` over fixed chunks of ``range(n)``, in order.

    Chunk boundaries do not depend on ``threads``, so the concatenated result
    is bit-identical for any worker count.
    """
    bounds = chunk_bounds(n, chunk)
    threads = default_threads() if threads is None else threads
    if threads <= 1 or len(bounds) <= 1:
        return [fn(a, b) for a, b in bounds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda ab: fn(*ab), bounds))


def concat(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts, axis=0) if parts else np.empty(0)
