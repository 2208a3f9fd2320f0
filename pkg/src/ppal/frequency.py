"""Count-Mean-Min frequency sketch with conservative update.

A ``depth x width`` matrix of counters, one seeded hash per row. A
conservative update raises each addressed counter only up to ``min + 1``, so
counters stay as small as the count-min guarantee allows. Point queries
return the count-min bound with the expected collision noise of each row
deducted, which trades the one-sided error of count-min for a smaller,
possibly negative, error.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable

import numpy as np

from ppal.errors import ConfigError
from ppal.hashing import MASK64, as_bytes, derive_seed, hash64

DEFAULT_DEPTH = 4
DEFAULT_WIDTH = 16384

_FORMAT_VERSION = 1
_HEADER = struct.Struct("<BBHIQ")  # version, conservative flag, depth, width, stream length


class CountMeanMin:
    """Single-writer Count-Mean-Min sketch over byte strings.

    Args:
        depth: number of hash rows ``d`` (>= 1).
        width: counters per row ``w`` (>= 2; noise deduction divides by ``w - 1``).
        seed: master seed; row seeds are derived from it unless ``row_seeds``
            is given explicitly.
        conservative: use conservative update (the default). ``False`` gives a
            plain count-min sketch, kept for comparisons.
    """

    def __init__(
        self,
        depth: int = DEFAULT_DEPTH,
        width: int = DEFAULT_WIDTH,
        seed: int = 0,
        *,
        conservative: bool = True,
        row_seeds: Iterable[int] | None = None,
    ) -> None:
        if not isinstance(depth, int) or depth < 1:
            raise ConfigError(f"depth must be an integer >= 1, got {depth!r}")
        if not isinstance(width, int) or width < 2:
            raise ConfigError(f"width must be an integer >= 2, got {width!r}")
        self.depth = depth
        self.width = width
        self.conservative = conservative
        if row_seeds is None:
            self.row_seeds = [derive_seed(seed, "cmm-row", i) for i in range(depth)]
        else:
            self.row_seeds = [int(s) & MASK64 for s in row_seeds]
            if len(self.row_seeds) != depth:
                raise ConfigError(f"expected {depth} row seeds, got {len(self.row_seeds)}")
        self.counters = np.zeros((depth, width), dtype=np.int64)
        self.stream_length = 0

    def indexes(self, item: bytes | str) -> list[int]:
        """Counter column addressed by ``item`` in each row."""
        data = as_bytes(item)
        width = self.width
        return [hash64(data, s) % width for s in self.row_seeds]

    def update(self, item: bytes | str) -> None:
        self.update_many((item,))

    def update_many(self, items: Iterable[bytes | str]) -> None:
        """Apply one update per element of ``items``, in order."""
        width = self.width
        flat = self.counters.ravel().tolist()
        offsets = [row * width for row in range(self.depth)]
        cache: dict[bytes, list[int]] = {}
        n = 0
        for item in items:
            data = as_bytes(item)
            slots = cache.get(data)
            if slots is None:
                slots = [o + c for o, c in zip(offsets, self.indexes(data))]
                cache[data] = slots
            if self.conservative:
                target = min(flat[s] for s in slots) + 1
                for s in slots:
                    if flat[s] < target:
                        flat[s] = target
            else:
                for s in slots:
                    flat[s] += 1
            n += 1
        self.counters = np.asarray(flat, dtype=np.int64).reshape(self.depth, self.width)
        self.stream_length += n

    def row_counts(self, item: bytes | str) -> list[int]:
        return [int(self.counters[row, col]) for row, col in enumerate(self.indexes(item))]

    def count_min(self, item: bytes | str) -> int:
        """Plain count-min bound: never below the true frequency."""
        return min(self.row_counts(item))

    def estimate(self, item: bytes | str) -> float:
        """Noise-deducted frequency estimate.

        Each row's counter ``c`` has ``(N - c) / (w - 1)`` subtracted, the
        expected mass other items hash onto it. The median of the deducted
        rows is clamped into ``[0, count_min]``.
        """
        counts = np.asarray(self.row_counts(item), dtype=np.float64)
        upper = float(counts.min())
        deducted = counts - (self.stream_length - counts) / (self.width - 1)
        return max(0.0, min(upper, float(np.median(deducted))))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CountMeanMin):
            return NotImplemented
        return (
            self.row_seeds == other.row_seeds
            and self.conservative == other.conservative
            and self.stream_length == other.stream_length
            and bool(np.array_equal(self.counters, other.counters))
        )

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            _FORMAT_VERSION, int(self.conservative), self.depth, self.width, self.stream_length
        )
        seeds = struct.pack(f"<{self.depth}Q", *self.row_seeds)
        return header + seeds + self.counters.astype("<u8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> CountMeanMin:
        if len(blob) < _HEADER.size:
            raise ConfigError("truncated Count-Mean-Min blob")
        version, conservative, depth, width, length = _HEADER.unpack_from(blob)
        if version != _FORMAT_VERSION:
            raise ConfigError(f"unsupported Count-Mean-Min format version {version}")
        offset = _HEADER.size
        seeds = struct.unpack_from(f"<{depth}Q", blob, offset)
        offset += 8 * depth
        body = blob[offset:]
        if len(body) != 8 * depth * width:
            raise ConfigError("counter payload has the wrong size")
        sketch = cls(depth, width, conservative=bool(conservative), row_seeds=seeds)
        sketch.counters = np.frombuffer(body, dtype="<u8").astype(np.int64).reshape(depth, width)
        sketch.stream_length = length
        return sketch
