import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from falcon_gvs.dataset_io import Metric, VectorSet, compute_ground_truth, generate_synthetic
from falcon_gvs.graph_index import GraphIndex, _from_lists, build_graph

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def chain_graph() -> GraphIndex:
    """Path 0-1-2-3-4 over the 1-D points 0..4, entry 0."""
    vectors = VectorSet(np.arange(5, dtype=np.float32).reshape(5, 1), Metric.L2)
    lists = [[1], [0, 2], [1, 3], [2, 4], [3]]
    return _from_lists(vectors, lists, 2, 0, 4, Metric.L2)


def complete_graph(vectors: VectorSet, entry: int = 0) -> GraphIndex:
    n = vectors.count
    lists = [[j for j in range(n) if j != i] for i in range(n)]
    return _from_lists(vectors, lists, max(n - 1, 1), entry, 4, vectors.metric or Metric.L2)


def random_graph(seed, n=None, dim=None, metric=Metric.L2):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 40))
    dim = dim or int(rng.integers(1, 5))
    data = rng.standard_normal((n, dim)).astype(np.float32)
    md = int(rng.integers(1, min(n, 8)))
    lists = []
    for v in range(n):
        others = np.delete(np.arange(n), v)
        lists.append(rng.choice(others, size=int(rng.integers(0, md + 1)), replace=False).tolist())
    g = _from_lists(VectorSet(data, metric), lists, md, int(rng.integers(n)), 4, metric)
    return g, rng.standard_normal(dim).astype(np.float32)


@pytest.fixture(scope="session")
def small_graph():
    v = generate_synthetic(2000, 8, 11)
    return build_graph(v, 16, 64)


@pytest.fixture(scope="session")
def small_queries():
    return generate_synthetic(100, 8, 12).data


@pytest.fixture(scope="session")
def small_gt(small_graph, small_queries):
    return compute_ground_truth(small_graph.vectors, VectorSet(small_queries), 10).ids


@pytest.fixture(scope="session")
def data20k():
    """20k uniform 16-D vectors with 100 queries and exact top-10."""
    v = generate_synthetic(20000, 16, 7)
    q = generate_synthetic(100, 16, 8)
    return v, q.data, compute_ground_truth(v, q, 10).ids


@pytest.fixture(scope="session")
def graph20k(data20k):
    return build_graph(data20k[0], 16, 64)


@pytest.fixture(scope="session")
def desk():
    """Degree-64 desk-scale benchmark: 5000 gaussian 128-D vectors, 100 queries."""
    v = generate_synthetic(5000, 128, 1, "gaussian")
    q = generate_synthetic(100, 128, 2, "gaussian")
    g = build_graph(v, 64, 64)
    return g, q.data, compute_ground_truth(v, q, 10).ids


def random_graph_for_sim(seed):
    """Small random graph with a query, for simulator property tests."""
    rng = np.random.default_rng(seed)
    n, dim = int(rng.integers(20, 60)), int(rng.integers(1, 40))
    v = VectorSet(rng.standard_normal((n, dim)).astype(np.float32))
    return build_graph(v, 6, 12), rng.standard_normal(dim).astype(np.float32)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] criterion {n:>2}: {name} -- {detail}")
