"""scikit-learn style wrapper: build a proximity graph in ``fit`` and query it."""

from __future__ import annotations

from collections import Counter

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive_int, check_vectors
from .dataset_io import Metric, VectorSet
from .graph_index import build_graph
from .traversal import Algorithm, SearchParams, search


class GraphNeighbors(ClassifierMixin, BaseEstimator):
    """Approximate k-nearest-neighbor search over a proximity graph.

    Parameters
    ----------
    n_neighbors : int
        Default ``k`` for :meth:`kneighbors` and the vote size for :meth:`predict`.
    max_degree, ef_construction :
        Graph builder settings.
    metric : {"l2", "ip", "cosine"}
    algorithm : {"bfs", "mcs", "dst"}
    candidate_list : int
        Candidate/result queue size ``l``.
    mg, mc : int
        Groups in flight and candidates per group; BFS needs both at 1 and
        MCS needs ``mg == 1``.
    tracker : {"bloom", "exact", "bytearray"}
    """

    def __init__(self, n_neighbors=10, *, max_degree=16, ef_construction=64, metric="l2",
                 algorithm="bfs", candidate_list=64, mg=1, mc=1, tracker="bloom", seed=0):
        self.n_neighbors = n_neighbors
        self.max_degree = max_degree
        self.ef_construction = ef_construction
        self.metric = metric
        self.algorithm = algorithm
        self.candidate_list = candidate_list
        self.mg = mg
        self.mc = mc
        self.tracker = tracker
        self.seed = seed

    def _params(self, k: int) -> SearchParams:
        return SearchParams(k=k, l=max(self.candidate_list, k),
                            algorithm=Algorithm.parse(self.algorithm), mg=self.mg, mc=self.mc,
                            tracker_kind=self.tracker)

    def fit(self, X, y=None):
        X = check_vectors(X)
        check_positive_int(self.n_neighbors, "n_neighbors")
        self._params(1)  # validate search settings before the expensive build
        self.index_ = build_graph(VectorSet(X, Metric.parse(self.metric)),
                                  max_degree=min(self.max_degree, max(len(X) - 1, 2)),
                                  ef_construction=self.ef_construction, seed=self.seed)
        self.n_features_in_ = X.shape[1]
        self.n_samples_fit_ = X.shape[0]
        if y is not None:
            y = np.asarray(y)
            if y.shape[0] != X.shape[0]:
                raise ValueError(f"y has {y.shape[0]} rows, X has {X.shape[0]}")
            self.classes_ = np.unique(y)
            self._y = y
        return self

    def kneighbors(self, X=None, n_neighbors=None, return_distance=True):
        """Indices (and distances) of the approximate nearest neighbors of each row."""
        check_is_fitted(self, "index_")
        k = check_positive_int(self.n_neighbors if n_neighbors is None else n_neighbors,
                               "n_neighbors")
        if k > self.n_samples_fit_:
            raise ValueError(f"n_neighbors={k} exceeds {self.n_samples_fit_} fitted samples")
        X = self.index_.vectors.data if X is None else check_vectors(X, self.n_features_in_)
        params = self._params(k)
        dist = np.empty((len(X), k), dtype=np.float64)
        ind = np.empty((len(X), k), dtype=np.int64)
        for row, q in enumerate(X):
            res = search(self.index_, q, params)
            got = len(res.neighbors)
            ind[row, :got] = res.ids
            dist[row, :got] = res.distances
            ind[row, got:] = -1
            dist[row, got:] = np.inf
        return (dist, ind) if return_distance else ind

    def predict(self, X):
        """Majority label among the neighbors; ties go to the smallest label."""
        check_is_fitted(self, "index_")
        if not hasattr(self, "_y"):
            raise ValueError("predict requires fit(X, y) with labels")
        ind = self.kneighbors(X, return_distance=False)
        out = []
        for row in ind:
            votes = Counter(self._y[i] for i in row if i >= 0)
            best = max(votes.values())
            out.append(min(label for label, n in votes.items() if n == best))
        return np.asarray(out)
