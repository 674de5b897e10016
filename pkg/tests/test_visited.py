import numpy as np
import pytest
from hypothesis import given, strategies as st
from murmurhash2 import murmurhash2 as reference_murmur2
from scipy.stats import binomtest

from falcon_gvs.visited import (
    BLOOM_SEEDS,
    BloomFilter,
    ByteArrayTracker,
    ExactTracker,
    hash_table_collision_probability,
    make_tracker,
    murmur2,
    murmur2_array,
    theoretical_fpr,
)


def measured_fpr(h, b, m=1000, probes=10**6):
    f = BloomFilter(b, h)
    f.insert_many(np.arange(m))
    hits = int(f.contains_many(np.arange(m, m + probes)).sum())
    return hits, probes


def test_murmur2_matches_reference_implementation():
    rng = np.random.default_rng(1)
    keys = rng.integers(0, 2**32, 1000, dtype=np.uint64)
    for seed in BLOOM_SEEDS[:3] + (0, 1):
        vec = murmur2_array(keys, seed)
        for k, v in zip(keys.tolist(), vec.tolist()):
            ref = reference_murmur2(int(k).to_bytes(4, "little"), seed)
            assert murmur2(k, seed) == ref == v


def test_murmur2_deterministic_and_seed_streams_differ():
    assert murmur2(12345, 7) == murmur2(12345, 7)
    keys = np.arange(10**4)
    streams = [murmur2_array(keys, s) for s in BLOOM_SEEDS]
    for i in range(len(streams)):
        for j in range(i + 1, len(streams)):
            assert not np.any(streams[i] == streams[j])


def test_theoretical_fpr_values():
    assert theoretical_fpr(3, 32768, 0) == 0
    assert theoretical_fpr(3, 32768, 1000) == pytest.approx(6.70e-4, rel=5e-3)
    assert theoretical_fpr(1, 32768, 1000) == pytest.approx(0.030, rel=2e-2)
    p = theoretical_fpr(3, 1 << 18, 1000)
    assert p == pytest.approx(1.47e-6, rel=1e-2)
    assert 600_000 <= 1 / p <= 700_000
    assert hash_table_collision_probability(1024, 1024) == pytest.approx(0.632, abs=1e-3)


@given(st.integers(1, 8), st.sampled_from([2**10, 2**15, 2**18]), st.integers(0, 5000),
       st.integers(1, 5000))
def test_theoretical_fpr_monotone(h, b, m, dm):
    assert theoretical_fpr(h, b, m) <= theoretical_fpr(h, b, m + dm)
    if m:
        assert theoretical_fpr(h, 2 * b, m) < theoretical_fpr(h, b, m)


@pytest.mark.parametrize("h,b", [(1, 32768), (3, 32768)])
def test_measured_fpr_within_factor_two(h, b):
    hits, n = measured_fpr(h, b, probes=100_000)
    assert 0.5 <= (hits / n) / theoretical_fpr(h, b, 1000) <= 2.0


@pytest.mark.parametrize("h,b", [(1, 32768), (3, 32768), (3, 1 << 18)])
def test_measured_fpr_in_binomial_ci(h, b):
    hits, n = measured_fpr(h, b)
    ci = binomtest(hits, n).proportion_ci(0.99)
    assert ci.low <= theoretical_fpr(h, b, 1000) <= ci.high


def test_shadow_counts_false_positives():
    f = BloomFilter(64, 1, shadow=True)
    f.insert_many(np.arange(40))
    fresh = f.mark_unvisited(np.arange(40, 400))
    # every probe that was not returned as fresh is a false positive
    assert f.false_positives == 360 - len(fresh) > 0


def test_bloom_rejects_bad_config():
    with pytest.raises(ValueError):
        BloomFilter(1000, 3)
    with pytest.raises(ValueError):
        BloomFilter(1024, 0)


def test_tracker_basics():
    for t in (BloomFilter(), ExactTracker(), ByteArrayTracker(100)):
        assert not t.contains(5)
        t.insert(5)
        t.insert(5)
        assert t.contains(5)
        t.reset()
        assert not t.contains(5)
    f = BloomFilter()
    f.insert_many(range(1000))
    assert all(f.contains(i) for i in range(1000))
    f.reset()
    assert f.inserted == 0 and not f.bitmap.any()
    with pytest.raises(IndexError):
        ByteArrayTracker(10).insert(10)
    with pytest.raises(ValueError):
        make_tracker("hash", 10)


seqs = st.lists(st.lists(st.integers(0, 499), max_size=12), max_size=30)


@given(seqs, st.sampled_from([64, 1024]), st.integers(1, 4))
def test_no_false_negatives(batches, bits, hashes):
    trackers = [BloomFilter(bits, hashes), ExactTracker(), ByteArrayTracker(500)]
    seen = set()
    for batch in batches:
        results = [t.mark_unvisited(batch) for t in trackers]
        exact = [i for i in dict.fromkeys(batch) if i not in seen]
        assert results[1] == exact and results[2] == exact
        assert set(results[0]) <= set(exact)
        seen.update(batch)
        for t in trackers:
            assert all(t.contains(i) for i in seen)
