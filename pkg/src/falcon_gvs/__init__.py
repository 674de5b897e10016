"""Graph-based approximate nearest neighbor search with delayed-synchronization traversal."""

from .dataset_io import (
    GroundTruth,
    Metric,
    VectorSet,
    brute_force_knn,
    compute_ground_truth,
    distance,
    generate_synthetic,
    read_fvecs,
    read_ivecs,
    write_fvecs,
    write_ivecs,
)
from .estimator import GraphNeighbors
from .graph_index import GraphIndex, SubgraphSet, build_graph, load, save, split_subgraphs
from .pqueue import BoundedQueue
from .traversal import Algorithm, SearchParams, SearchResult, recall_at_k, search
from .visited import BloomFilter, make_tracker, theoretical_fpr

__all__ = [
    "Algorithm",
    "BloomFilter",
    "BoundedQueue",
    "GraphIndex",
    "GraphNeighbors",
    "GroundTruth",
    "Metric",
    "SearchParams",
    "SearchResult",
    "SubgraphSet",
    "VectorSet",
    "brute_force_knn",
    "build_graph",
    "compute_ground_truth",
    "distance",
    "generate_synthetic",
    "load",
    "make_tracker",
    "read_fvecs",
    "read_ivecs",
    "recall_at_k",
    "save",
    "search",
    "split_subgraphs",
    "theoretical_fpr",
    "write_fvecs",
    "write_ivecs",
]

__version__ = "0.1.0"
