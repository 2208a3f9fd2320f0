"""Seeded 64-bit hashing and seed derivation.

Everything random in a run is derived from one master seed. ``derive_seed``
maps ``(master, *labels)`` to an independent 64-bit seed so that, say, the
subsample generator of a run does not depend on how many draws the annotator
made before it.
"""

from __future__ import annotations

import xxhash

MASK64 = (1 << 64) - 1


def as_bytes(item: bytes | str) -> bytes:
    if isinstance(item, bytes):
        return item
    return item.encode("utf-8")


def hash64(item: bytes | str, seed: int = 0) -> int:
    """xxh64 of ``item`` (UTF-8 encoded when given as ``str``)."""
    return xxhash.xxh64_intdigest(as_bytes(item), seed=seed & MASK64)


def derive_seed(master: int, *labels: object) -> int:
    """Deterministically derive a child seed from ``master`` and ``labels``."""
    key = "\x1f".join(str(label) for label in labels)
    return xxhash.xxh64_intdigest(key.encode("utf-8"), seed=master & MASK64)
