import math

import pytest
from hypothesis import given, strategies as st

from falcon_gvs.pqueue import BoundedQueue


class ReferenceQueue:
    """Plain sorted list with the same capacity and eviction rule."""

    def __init__(self, cap):
        self.cap = cap
        self.items = []

    def insert(self, i, d):
        if any(j == i for _, j in self.items):
            return False
        self.items.append((d, i))
        self.items.sort()
        if len(self.items) > self.cap:
            dropped = self.items.pop()
            return dropped != (d, i)
        return True

    def extract_min(self):
        d, i = self.items.pop(0)
        return i, d

    def extract_min_threshold(self, mc, t):
        out = []
        while self.items and len(out) < mc and self.items[0][0] <= t:
            out.append(self.extract_min())
        return out


def test_insert_examples():
    q = BoundedQueue(4)
    assert q.insert(7, 1.5) and q.min() == (7, 1.5)
    q = BoundedQueue(2)
    q.insert(1, 1.0)
    q.insert(2, 2.0)
    assert q.insert(3, 1.5)
    assert q.entries() == [(1, 1.0), (3, 1.5)] and 2 not in q
    assert not q.insert(4, 9.0)
    with pytest.raises(ValueError):
        q.insert(5, math.nan)
    with pytest.raises(ValueError):
        q.insert(5, math.inf)


def test_extract_examples():
    q = BoundedQueue(4)
    q.insert(3, 0.5)
    q.insert(1, 0.5)
    assert q.extract_min() == (1, 0.5)
    q = BoundedQueue(1)
    q.insert(9, 2.0)
    assert q.extract_min() == (9, 2.0) and len(q) == 0
    with pytest.raises(IndexError):
        q.extract_min()


def test_extract_sorted_oracle():
    import random

    rnd = random.Random(3)
    q = BoundedQueue(100)
    pairs = [(i, rnd.random()) for i in range(100)]
    for p in pairs:
        q.insert(*p)
    out = [q.extract_min() for _ in range(100)]
    assert out == sorted(pairs, key=lambda p: (p[1], p[0]))


def test_threshold_examples():
    def make():
        q = BoundedQueue(5)
        for i, d in [(1, 1.0), (2, 2.0), (3, 3.0)]:
            q.insert(i, d)
        return q

    assert make().extract_min_threshold(2, 2.5) == [(1, 1.0), (2, 2.0)]
    q = make()
    assert q.extract_min_threshold(3, 0.5) == [] and len(q) == 3
    assert make().extract_min_threshold(10, 2.5) == [(1, 1.0), (2, 2.0)]
    assert make().extract_min_threshold(10, 2.0) == [(1, 1.0), (2, 2.0)]


def test_max_distance_examples():
    q = BoundedQueue(4)
    assert q.max_distance(4) == math.inf
    q2 = BoundedQueue(2)
    q2.insert(1, 1.0)
    q2.insert(2, 2.0)
    assert q2.max_distance(2) == 2.0
    for i in range(3):
        q.insert(i, float(i))
    assert q.max_distance(4) == math.inf


def test_sorted_top_k():
    q = BoundedQueue(3)
    for i, d in [(5, 3.0), (6, 1.0)]:
        q.insert(i, d)
    assert q.sorted_top_k(2) == [(6, 1.0), (5, 3.0)]
    with pytest.raises(ValueError):
        q.sorted_top_k(3)


ops = st.lists(st.one_of(
    st.tuples(st.just("ins"), st.integers(0, 30), st.integers(0, 20).map(lambda x: x / 4)),
    st.tuples(st.just("pop"), st.just(0), st.just(0.0)),
    st.tuples(st.just("thr"), st.integers(1, 4), st.integers(0, 20).map(lambda x: x / 4)),
), max_size=60)


@given(st.integers(1, 8), ops)
def test_matches_reference_model(cap, seq):
    q, ref = BoundedQueue(cap), ReferenceQueue(cap)
    for op, a, b in seq:
        if op == "ins":
            assert q.insert(a, b) == ref.insert(a, b)
        elif op == "pop":
            if ref.items:
                assert q.extract_min() == ref.extract_min()
        else:
            assert q.extract_min_threshold(a, b) == ref.extract_min_threshold(a, b)
        ids = [i for i, _ in q.entries()]
        assert len(ids) == len(set(ids)) <= cap
        assert q.entries() == [(i, d) for d, i in ref.items]


@given(st.lists(st.tuples(st.integers(0, 50), st.floats(0, 10)), max_size=40))
def test_threshold_drain_is_sorted(pairs):
    q = BoundedQueue(64)
    for p in pairs:
        q.insert(*p)
    expected = sorted(q.entries(), key=lambda p: (p[1], p[0]))
    assert q.extract_min_threshold(10**9, math.inf) == expected
    assert len(q) == 0
