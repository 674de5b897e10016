"""Per-query visited-node tracking.

Three interchangeable trackers share one small interface (``insert``,
``contains``, ``reset`` and the batched ``mark_unvisited``):

* :class:`BloomFilter` - ``h`` Murmur2 hashes over a ``b``-bit bitmap, the
  layout used by the accelerator's on-chip filter.  Optionally shadowed by an
  exact set so that false positives can be counted.
* :class:`ExactTracker` - a Python set.
* :class:`ByteArrayTracker` - one flag byte per node, the usual CPU layout.
"""

from __future__ import annotations

import math
from typing import Iterable, List, Optional

import numpy as np

__all__ = [
    "BLOOM_SEEDS",
    "murmur2",
    "murmur2_array",
    "theoretical_fpr",
    "hash_table_collision_probability",
    "BloomFilter",
    "ExactTracker",
    "ByteArrayTracker",
    "make_tracker",
]

_M = 0x5BD1E995
_MASK32 = 0xFFFFFFFF

# Fixed seeds so traces are reproducible across runs and hosts.
BLOOM_SEEDS = (
    0x9747B28C,
    0x85EBCA6B,
    0xC2B2AE35,
    0x27D4EB2F,
    0x165667B1,
    0xD3A2646C,
    0xFD7046C5,
    0xB55A4F09,
)


def murmur2(key: int, seed: int) -> int:
    """32-bit MurmurHash2 of a 4-byte little-endian key."""
    k = key & _MASK32
    h = (seed ^ 4) & _MASK32
    k = (k * _M) & _MASK32
    k ^= k >> 24
    k = (k * _M) & _MASK32
    h = (h * _M) & _MASK32
    h ^= k
    h ^= h >> 13
    h = (h * _M) & _MASK32
    h ^= h >> 15
    return h


def murmur2_array(keys, seed: int) -> np.ndarray:
    """Vectorised :func:`murmur2` over an array of 32-bit keys."""
    m = np.uint32(_M)
    k = np.asarray(keys).astype(np.int64).astype(np.uint32)
    h = np.full(k.shape, (seed ^ 4) & _MASK32, dtype=np.uint32)
    with np.errstate(over="ignore"):
        k = k * m
        k ^= k >> np.uint32(24)
        k = k * m
        h = h * m
        h ^= k
        h ^= h >> np.uint32(13)
        h = h * m
        h ^= h >> np.uint32(15)
    return h


def theoretical_fpr(h: int, b: int, m: int) -> float:
    """Bloom filter false-positive probability ``(1 - exp(-h m / b)) ** h``."""
    if h < 1 or b < 1 or m < 0:
        raise ValueError(f"need h >= 1, b >= 1, m >= 0 (got h={h}, b={b}, m={m})")
    return (1.0 - math.exp(-h * m / b)) ** h


def hash_table_collision_probability(slots: int, occupied: int) -> float:
    """Chance that a new key lands in an occupied slot of a direct-mapped table."""
    return 1.0 - (1.0 - 1.0 / slots) ** occupied


class BloomFilter:
    """Bloom filter over node ids with power-of-two bitmap size.

    Bit positions are the low ``log2(bits)`` bits of each Murmur2 hash.
    """

    def __init__(self, bits: int = 1 << 18, hashes: int = 3, shadow: bool = False):
        if bits < 1 or bits & (bits - 1):
            raise ValueError(f"bits must be a power of two, got {bits}")
        if not 1 <= hashes <= len(BLOOM_SEEDS):
            raise ValueError(f"hashes must be in [1, {len(BLOOM_SEEDS)}], got {hashes}")
        self.bits = bits
        self.hashes = hashes
        self.seeds = BLOOM_SEEDS[:hashes]
        self._mask = bits - 1
        self.bitmap = np.zeros(bits, dtype=bool)
        self.inserted = 0
        self.shadow: Optional[set] = set() if shadow else None
        self.false_positives = 0

    def positions(self, ids) -> np.ndarray:
        """``(len(ids), hashes)`` bit positions."""
        ids = np.asarray(ids)
        cols = [murmur2_array(ids, s) & np.uint32(self._mask) for s in self.seeds]
        return np.stack(cols, axis=-1).astype(np.intp)

    def insert(self, node_id: int) -> None:
        self.bitmap[self.positions([node_id])[0]] = True
        self.inserted += 1
        if self.shadow is not None:
            self.shadow.add(node_id)

    def contains(self, node_id: int) -> bool:
        return bool(self.bitmap[self.positions([node_id])[0]].all())

    __contains__ = contains

    def insert_many(self, ids) -> None:
        ids = np.asarray(ids)
        self.bitmap[self.positions(ids).ravel()] = True
        self.inserted += ids.size
        if self.shadow is not None:
            self.shadow.update(int(i) for i in ids)

    def contains_many(self, ids) -> np.ndarray:
        return self.bitmap[self.positions(ids)].all(axis=-1)

    def mark_unvisited(self, ids) -> List[int]:
        """Check-then-insert each id in order; return those that were unvisited.

        Sequential semantics matter: marking one id can turn a later id in
        the same batch into a false positive.
        """
        ids = np.asarray(ids)
        if ids.size == 0:
            return []
        pos = self.positions(ids).tolist()
        bitmap = self.bitmap
        fresh = []
        for node_id, p in zip(ids.tolist(), pos):
            if all(bitmap[j] for j in p):
                if self.shadow is not None and node_id not in self.shadow:
                    self.false_positives += 1
                continue
            bitmap[p] = True
            self.inserted += 1
            if self.shadow is not None:
                self.shadow.add(node_id)
            fresh.append(node_id)
        return fresh

    def reset(self) -> None:
        self.bitmap[:] = False
        self.inserted = 0
        self.false_positives = 0
        if self.shadow is not None:
            self.shadow.clear()

    def fill_ratio(self) -> float:
        return float(self.bitmap.mean())

    def expected_fpr(self) -> float:
        return theoretical_fpr(self.hashes, self.bits, self.inserted)


class ExactTracker:
    def __init__(self):
        self._seen = set()
        self.false_positives = 0

    def insert(self, node_id: int) -> None:
        self._seen.add(node_id)

    def contains(self, node_id: int) -> bool:
        return node_id in self._seen

    __contains__ = contains

    def mark_unvisited(self, ids: Iterable[int]) -> List[int]:
        seen = self._seen
        fresh = []
        for i in np.asarray(ids).tolist():
            if i not in seen:
                seen.add(i)
                fresh.append(i)
        return fresh

    def reset(self) -> None:
        self._seen.clear()

    def __len__(self) -> int:
        return len(self._seen)


class ByteArrayTracker:
    def __init__(self, num_nodes: int):
        self.num_nodes = int(num_nodes)
        self._flags = bytearray(self.num_nodes)
        self.false_positives = 0

    def _check(self, node_id: int) -> None:
        if not 0 <= node_id < self.num_nodes:
            raise IndexError(f"node id {node_id} out of range [0, {self.num_nodes})")

    def insert(self, node_id: int) -> None:
        self._check(node_id)
        self._flags[node_id] = 1

    def contains(self, node_id: int) -> bool:
        self._check(node_id)
        return bool(self._flags[node_id])

    __contains__ = contains

    def mark_unvisited(self, ids: Iterable[int]) -> List[int]:
        flags = self._flags
        fresh = []
        for i in np.asarray(ids).tolist():
            self._check(i)
            if not flags[i]:
                flags[i] = 1
                fresh.append(i)
        return fresh

    def reset(self) -> None:
        self._flags = bytearray(self.num_nodes)


def make_tracker(kind: str, num_nodes: int, bloom_bits: int = 1 << 18,
                 bloom_hashes: int = 3, shadow: bool = False):
    if kind == "bloom":
        return BloomFilter(bloom_bits, bloom_hashes, shadow=shadow)
    if kind == "exact":
        return ExactTracker()
    if kind == "bytearray":
        return ByteArrayTracker(num_nodes)
    raise ValueError(f"unknown tracker kind {kind!r}")
