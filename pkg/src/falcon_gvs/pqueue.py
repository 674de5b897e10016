"""Fixed-capacity distance-ordered queue.

Entries are ``(id, distance)`` pairs ordered by ``(distance, id)``.  The same
structure backs both the candidate queue and the result queue of the
traversals; a full queue evicts its worst entry when a better one arrives.
"""

from __future__ import annotations

import math
from bisect import bisect_left, insort
from typing import List, Tuple

__all__ = ["BoundedQueue"]

Entry = Tuple[int, float]


class BoundedQueue:
    __slots__ = ("capacity", "_items", "_ids")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        # ascending list of (distance, id)
        self._items: List[Tuple[float, int]] = []
        self._ids = set()

    def __len__(self) -> int:
        return len(self._items)

    def __bool__(self) -> bool:
        return bool(self._items)

    def __contains__(self, node_id) -> bool:
        return node_id in self._ids

    def __repr__(self) -> str:
        return f"BoundedQueue(capacity={self.capacity}, entries={self.entries()})"

    def insert(self, node_id: int, dist: float) -> bool:
        """Store ``(node_id, dist)``; returns False when the entry is rejected."""
        if not math.isfinite(dist):
            raise ValueError(f"distance must be finite, got {dist}")
        if node_id in self._ids:
            return False
        key = (dist, node_id)
        items = self._items
        if len(items) >= self.capacity:
            if key >= items[-1]:
                return False
            _, evicted = items.pop()
            self._ids.discard(evicted)
        insort(items, key)
        self._ids.add(node_id)
        return True

    def min(self) -> Entry:
        if not self._items:
            raise IndexError("min of empty queue")
        d, i = self._items[0]
        return i, d

    def max(self) -> Entry:
        if not self._items:
            raise IndexError("max of empty queue")
        d, i = self._items[-1]
        return i, d

    def extract_min(self) -> Entry:
        if not self._items:
            raise IndexError("extract_min from empty queue")
        d, i = self._items.pop(0)
        self._ids.discard(i)
        return i, d

    def extract_min_threshold(self, max_count: int, threshold: float) -> List[Entry]:
        """Pop up to ``max_count`` smallest entries with distance <= threshold."""
        if max_count < 1:
            raise ValueError(f"max_count must be >= 1, got {max_count}")
        items = self._items
        # entries with distance <= threshold form a prefix
        cut = bisect_left(items, (threshold, math.inf)) if threshold < math.inf else len(items)
        take = min(max_count, cut)
        out = items[:take]
        del items[:take]
        for _, i in out:
            self._ids.discard(i)
        return [(i, d) for d, i in out]

    def max_distance(self, fill: int) -> float:
        """Worst stored distance, or +inf while fewer than ``fill`` entries are held."""
        if len(self._items) < fill:
            return math.inf
        return self._items[-1][0]

    def sorted_top_k(self, k: int) -> List[Entry]:
        if k > len(self._items):
            raise ValueError(f"k={k} exceeds queue size {len(self._items)}")
        return [(i, d) for d, i in self._items[:k]]

    def entries(self) -> List[Entry]:
        return [(i, d) for d, i in self._items]

    def clear(self) -> None:
        self._items.clear()
        self._ids.clear()
