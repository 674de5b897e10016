"""Unified proximity-graph format, persistence and a simple builder.

Every node owns a fixed-size record: a degree followed by ``max_degree``
neighbor slots (unused slots hold ``0xFFFFFFFF``), mirroring a fixed-degree
device memory layout.  Node ``v`` lives on memory channel
``v % channel_count``.
"""

from __future__ import annotations

import heapq
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numba
import numpy as np

from .dataset_io import Metric, VectorSet, distances

__all__ = [
    "SENTINEL",
    "GraphIndex",
    "GraphFormatError",
    "SubgraphSet",
    "build_graph",
    "import_adjacency",
    "export_adjacency",
    "save",
    "load",
    "split_subgraphs",
    "select_entry",
]

logger = logging.getLogger(__name__)

SENTINEL = 0xFFFFFFFF
MAGIC = b"FGVS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIII")  # magic, version, metric, count, dim, max_degree, entry, channels


class GraphFormatError(ValueError):
    pass


@dataclass(eq=False)
class GraphIndex:
    vectors: VectorSet
    adjacency: np.ndarray          # (count, max_degree) uint32, SENTINEL padded
    degrees: np.ndarray            # (count,) int32
    entry_node: int = 0
    channel_count: int = 4
    metric: Metric = Metric.L2

    def __post_init__(self):
        self.metric = Metric.parse(self.metric)
        self.adjacency = np.ascontiguousarray(self.adjacency, dtype=np.uint32)
        self.degrees = np.ascontiguousarray(self.degrees, dtype=np.int32)
        if self.vectors.metric is None or self.vectors.metric != self.metric:
            self.vectors = self.vectors.with_metric(self.metric)
        self._neighbor_lists: Optional[List[np.ndarray]] = None
        self._data64: Optional[np.ndarray] = None

    @property
    def count(self) -> int:
        return self.vectors.count

    @property
    def dim(self) -> int:
        return self.vectors.dim

    @property
    def max_degree(self) -> int:
        return self.adjacency.shape[1]

    @property
    def layout(self) -> np.ndarray:
        return np.arange(self.count, dtype=np.int64) % self.channel_count

    @property
    def num_edges(self) -> int:
        return int(self.degrees.sum())

    @property
    def data64(self) -> np.ndarray:
        """float64 copy of the vectors, cached for the distance kernel."""
        if self._data64 is None:
            self._data64 = self.vectors.data.astype(np.float64)
        return self._data64

    def neighbors(self, node: int) -> np.ndarray:
        if self._neighbor_lists is None:
            adj = self.adjacency.astype(np.int64)
            self._neighbor_lists = [adj[v, : self.degrees[v]] for v in range(self.count)]
        return self._neighbor_lists[node]

    def validate(self) -> None:
        """Raise ``GraphFormatError`` if any structural invariant is broken."""
        n, md = self.adjacency.shape
        if n != self.count:
            raise GraphFormatError(f"adjacency rows {n} != vector count {self.count}")
        if self.degrees.shape != (n,):
            raise GraphFormatError("degrees has the wrong shape")
        if np.any(self.degrees < 0) or np.any(self.degrees > md):
            raise GraphFormatError("degree outside [0, max_degree]")
        if not 0 <= self.entry_node < max(n, 1):
            raise GraphFormatError(f"entry node {self.entry_node} out of range")
        if self.channel_count < 1:
            raise GraphFormatError("channel_count must be >= 1")
        slots = np.arange(md)[None, :]
        used = slots < self.degrees[:, None]
        if np.any(self.adjacency[~used] != SENTINEL):
            raise GraphFormatError("unused neighbor slot is not the sentinel")
        for v in range(n):
            nb = self.adjacency[v, : self.degrees[v]]
            if np.any(nb >= n):
                raise GraphFormatError(f"node {v} has a neighbor id out of range")
            if np.any(nb == v):
                raise GraphFormatError(f"node {v} has a self-loop")
            if len(np.unique(nb)) != len(nb):
                raise GraphFormatError(f"node {v} has duplicate neighbors")

    def __eq__(self, other) -> bool:
        if not isinstance(other, GraphIndex):
            return NotImplemented
        return (
            self.vectors == other.vectors
            and self.metric == other.metric
            and self.entry_node == other.entry_node
            and self.channel_count == other.channel_count
            and np.array_equal(self.degrees, other.degrees)
            and np.array_equal(self.adjacency, other.adjacency)
        )

    __hash__ = None


def _from_lists(vectors: VectorSet, lists: Sequence[Sequence[int]], max_degree: int,
                entry_node: int, channel_count: int, metric) -> GraphIndex:
    n = vectors.count
    adj = np.full((n, max_degree), SENTINEL, dtype=np.uint32)
    deg = np.zeros(n, dtype=np.int32)
    for v, nb in enumerate(lists):
        deg[v] = len(nb)
        adj[v, : len(nb)] = nb
    return GraphIndex(vectors, adj, deg, entry_node, channel_count, metric)


# -- builder -----------------------------------------------------------------


@numba.njit(cache=True)
def _pair_dist(data, a, b, metric):
    acc = 0.0
    if metric == 0:
        for j in range(data.shape[1]):
            t = data[a, j] - data[b, j]
            acc += t * t
        return acc
    na = 0.0
    nb = 0.0
    for j in range(data.shape[1]):
        acc += data[a, j] * data[b, j]
        na += data[a, j] * data[a, j]
        nb += data[b, j] * data[b, j]
    if metric == 1:
        return -acc
    return 1.0 - acc / (np.sqrt(na) * np.sqrt(nb))


@numba.njit(cache=True)
def _greedy_search(data, metric, adj, deg, stamp, query, entry, ef):
    """Best-first search over the partial graph with an exact visited set.

    ``stamp[v] == query`` marks ``v`` visited for this insertion.  Returns
    up to ``ef`` ``(distance, id)`` pairs ascending.
    """
    d0 = _pair_dist(data, query, entry, metric)
    stamp[entry] = query
    cand = [(d0, entry)]
    # (-dist, -id): the heap root is the worst (dist, id)
    res = [(-d0, -entry)]
    while len(cand) > 0:
        dc, c = cand[0]
        if len(res) >= ef and dc > -res[0][0]:
            break
        heapq.heappop(cand)
        for s in range(deg[c]):
            n = adj[c, s]
            if stamp[n] == query:
                continue
            stamp[n] = query
            dn = _pair_dist(data, query, n, metric)
            if len(res) < ef:
                heapq.heappush(res, (-dn, -n))
                heapq.heappush(cand, (dn, n))
            else:
                wd = -res[0][0]
                wi = -res[0][1]
                if dn < wd or (dn == wd and n < wi):
                    heapq.heapreplace(res, (-dn, -n))
                    heapq.heappush(cand, (dn, n))
    out = [(-d, -i) for d, i in res]
    out.sort()
    return out


@numba.njit(cache=True)
def _build_adjacency(data, metric, max_degree, ef):
    n = data.shape[0]
    adj = np.zeros((n, max_degree), dtype=np.int64)
    deg = np.zeros(n, dtype=np.int64)
    stamp = np.full(n, -1, dtype=np.int64)
    pool_d = np.empty(max_degree + 1, dtype=np.float64)
    pool_i = np.empty(max_degree + 1, dtype=np.int64)
    for v in range(1, n):
        found = _greedy_search(data, metric, adj, deg, stamp, v, 0, ef)
        m = min(max_degree, len(found))
        for s in range(m):
            adj[v, s] = found[s][1]
        deg[v] = m
        for s in range(m):
            u = found[s][1]
            if deg[u] < max_degree:
                adj[u, deg[u]] = v
                deg[u] += 1
                continue
            for t in range(max_degree):
                pool_i[t] = adj[u, t]
                pool_d[t] = _pair_dist(data, u, adj[u, t], metric)
            pool_i[max_degree] = v
            pool_d[max_degree] = _pair_dist(data, u, v, metric)
            # keep the max_degree closest by (distance, id): drop the worst one
            worst = 0
            for t in range(1, max_degree + 1):
                if pool_d[t] > pool_d[worst] or (pool_d[t] == pool_d[worst] and pool_i[t] > pool_i[worst]):
                    worst = t
            w = 0
            for t in range(max_degree + 1):
                if t != worst:
                    adj[u, w] = pool_i[t]
                    w += 1
    return adj, deg


def build_graph(vectors: VectorSet, max_degree: int = 16, ef_construction: int = 64,
                seed: int = 0, metric=None, channel_count: int = 4,
                entry: str = "medoid") -> GraphIndex:
    """Incremental greedy-insertion graph builder.

    Nodes are inserted in id order: each new node runs a best-first search
    (result queue size ``ef_construction``) over the partial graph from node 0,
    links to its ``max_degree`` closest results and receives reverse edges; a
    full reverse list keeps its ``max_degree`` closest.  Insertion order is
    fixed, so ``seed`` does not change the output; it is accepted for
    interface stability.
    """
    if vectors.count < 1:
        raise ValueError("cannot build a graph over an empty vector set")
    if max_degree < 2:
        raise ValueError(f"max_degree must be >= 2, got {max_degree}")
    if ef_construction < max_degree:
        raise ValueError("ef_construction must be >= max_degree")
    metric = Metric.parse(metric if metric is not None else (vectors.metric or Metric.L2))
    data = vectors.data.astype(np.float64)
    adj, deg = _build_adjacency(data, int(metric), max_degree, ef_construction)
    lists = [adj[v, : deg[v]].tolist() for v in range(vectors.count)]
    index = _from_lists(VectorSet(vectors.data, metric), lists, max_degree, 0, channel_count,
                        metric)
    index.entry_node = select_entry(index, entry)
    return index


def select_entry(index: GraphIndex, strategy: str = "first") -> int:
    if strategy == "first":
        return 0
    if strategy == "medoid":
        centroid = index.vectors.data.astype(np.float64).mean(axis=0)
        d = distances(index.metric, centroid.astype(np.float32), index.vectors.data)
        return int(np.argmin(d))  # argmin returns the lowest id on ties
    raise ValueError(f"unknown entry strategy {strategy!r}")


# -- adjacency import/export ---------------------------------------------------


def export_adjacency(index: GraphIndex, path: os.PathLike) -> None:
    """Write ``[count][max_degree]`` then per node ``[degree][ids...]`` (LE uint32)."""
    parts = [np.array([index.count, index.max_degree], dtype="<u4")]
    for v in range(index.count):
        d = int(index.degrees[v])
        parts.append(np.array([d], dtype="<u4"))
        parts.append(index.adjacency[v, :d].astype("<u4"))
    with open(path, "wb") as fh:
        fh.write(b"".join(p.tobytes() for p in parts))


@dataclass
class ImportReport:
    dropped_self_loops: int = 0
    dropped_duplicates: int = 0

    @property
    def warnings(self) -> int:
        return self.dropped_self_loops + self.dropped_duplicates


def import_adjacency(vectors: VectorSet, adjacency_file: os.PathLike, entry_node: int = 0,
                     metric=None, channel_count: int = 4, report: Optional[ImportReport] = None
                     ) -> GraphIndex:
    """Load an externally built topology; see :func:`export_adjacency` for the layout."""
    raw = np.fromfile(adjacency_file, dtype="<u4")
    if raw.size < 2:
        raise GraphFormatError("adjacency file is missing its header")
    count, max_degree = int(raw[0]), int(raw[1])
    if count != vectors.count:
        raise GraphFormatError(f"adjacency declares {count} nodes, vectors have {vectors.count}")
    report = report if report is not None else ImportReport()
    pos = 2
    lists = []
    for v in range(count):
        if pos >= raw.size:
            raise GraphFormatError(f"adjacency truncated at node {v}")
        d = int(raw[pos])
        if d > max_degree:
            raise GraphFormatError(f"node {v} degree {d} exceeds declared max_degree {max_degree}")
        nb = raw[pos + 1: pos + 1 + d]
        if nb.size != d:
            raise GraphFormatError(f"adjacency truncated inside node {v}")
        pos += 1 + d
        kept = []
        seen = set()
        for u in nb.tolist():
            if u >= count:
                raise GraphFormatError(f"node {v} references out-of-range id {u}")
            if u == v:
                report.dropped_self_loops += 1
                continue
            if u in seen:
                report.dropped_duplicates += 1
                continue
            seen.add(u)
            kept.append(u)
        lists.append(kept)
    if pos != raw.size:
        raise GraphFormatError("trailing data after last adjacency record")
    if report.warnings:
        logger.warning("import dropped %d self-loops and %d duplicate edges",
                       report.dropped_self_loops, report.dropped_duplicates)
    metric = Metric.parse(metric if metric is not None else (vectors.metric or Metric.L2))
    index = _from_lists(vectors, lists, max_degree, entry_node, channel_count, metric)
    index.validate()
    return index


# -- FGVS container -------------------------------------------------------------


def _record_dtype(max_degree: int, dim: int) -> np.dtype:
    return np.dtype([("degree", "<u4"), ("nbrs", "<u4", (max_degree,)), ("vec", "<f4", (dim,))])


def save(index: GraphIndex, path: os.PathLike) -> None:
    n, md, dim = index.count, index.max_degree, index.dim
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, int(index.metric), n, dim, md,
                          index.entry_node, index.channel_count)
    rec = np.zeros(n, dtype=_record_dtype(md, dim))
    rec["degree"] = index.degrees
    rec["nbrs"] = index.adjacency
    rec["vec"] = index.vectors.data
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(rec.tobytes())


def load(path: os.PathLike) -> GraphIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise GraphFormatError("truncated FGVS header")
    magic, version, metric, n, dim, md, entry, channels = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise GraphFormatError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise GraphFormatError(f"unsupported FGVS version {version}")
    dt = _record_dtype(md, dim)
    body = blob[_HEADER.size:]
    if len(body) != n * dt.itemsize:
        raise GraphFormatError(
            f"FGVS body has {len(body)} bytes, expected {n * dt.itemsize}"
        )
    rec = np.frombuffer(body, dtype=dt, count=n)
    vectors = VectorSet(rec["vec"].reshape(n, dim).copy(), Metric(metric))
    index = GraphIndex(vectors, rec["nbrs"].reshape(n, md).copy(), rec["degree"].astype(np.int32),
                       int(entry), int(channels), Metric(metric))
    index.validate()
    return index


# -- subgraphs ---------------------------------------------------------------------


@dataclass(eq=False)
class SubgraphSet:
    parts: List[GraphIndex]
    global_ids: List[np.ndarray] = field(default_factory=list)

    @property
    def owner(self) -> Dict[int, Tuple[int, int]]:
        return {int(g): (p, local) for p, ids in enumerate(self.global_ids)
                for local, g in enumerate(ids)}

    @property
    def count(self) -> int:
        return sum(p.count for p in self.parts)


def split_subgraphs(vectors: VectorSet, parts: int, max_degree: int = 16,
                    ef_construction: int = 64, seed: int = 0, metric=None,
                    channel_count: int = 4, entry: str = "medoid") -> SubgraphSet:
    """Round-robin the vectors over ``parts`` subsets and build one graph per subset."""
    if not 1 <= parts <= vectors.count:
        raise ValueError(f"parts must be in [1, {vectors.count}], got {parts}")
    built, owners = [], []
    for p in range(parts):
        ids = np.arange(p, vectors.count, parts)
        sub = VectorSet(vectors.data[ids], vectors.metric)
        built.append(build_graph(sub, max_degree, ef_construction, seed, metric,
                                 channel_count, entry))
        owners.append(ids)
    return SubgraphSet(built, owners)
