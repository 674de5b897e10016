import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.estimator_checks import check_parameters_default_constructible

from falcon_gvs import GraphNeighbors, brute_force_knn
from falcon_gvs.dataset_io import VectorSet


@pytest.fixture(scope="module")
def data():
    rng = np.random.default_rng(0)
    X = rng.random((400, 6))
    return X, (X[:, 0] > 0.5).astype(int), rng.random((20, 6))


def test_params_round_trip():
    est = GraphNeighbors(5, algorithm="dst", mg=3, mc=2)
    assert est.get_params()["mg"] == 3
    assert clone(est).get_params() == est.get_params()
    check_parameters_default_constructible("GraphNeighbors", GraphNeighbors())


def test_kneighbors_matches_search(data):
    X, _, Q = data
    est = GraphNeighbors(5, candidate_list=400, tracker="exact").fit(X)
    dist, ind = est.kneighbors(Q)
    assert dist.shape == ind.shape == (20, 5)
    base = VectorSet(X.astype(np.float32))
    for row, q in enumerate(Q):
        ref = brute_force_knn(base, q, 5)
        assert ind[row].tolist() == [i for i, _ in ref]
        assert dist[row].tolist() == [d for _, d in ref]
    assert est.kneighbors(Q, 3, return_distance=False).shape == (20, 3)


def test_predict_and_score(data):
    X, y, _ = data
    est = GraphNeighbors(7, algorithm="dst", mg=2, mc=2).fit(X, y)
    assert set(est.classes_) == {0, 1}
    assert est.score(X, y) > 0.9


def test_validation(data):
    X, y, Q = data
    with pytest.raises(NotFittedError):
        GraphNeighbors().kneighbors(Q)
    est = GraphNeighbors().fit(X)
    with pytest.raises(ValueError):
        est.kneighbors(np.ones((2, 3)))
    with pytest.raises(ValueError):
        est.predict(Q)
    with pytest.raises(ValueError):
        est.kneighbors(Q, n_neighbors=401)
    with pytest.raises(ValueError):
        GraphNeighbors().fit(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        GraphNeighbors(algorithm="bfs", mc=2).fit(X)
    with pytest.raises(ValueError):
        GraphNeighbors().fit(X, y[:5])
