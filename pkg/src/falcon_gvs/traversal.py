"""Graph traversal: best-first search, multi-candidate search and DST.

``bfs_search`` evaluates one candidate per iteration and synchronizes the
queues after each.  ``mcs_search`` pops up to ``mc`` qualifying candidates
per iteration.  ``dst_search`` keeps up to ``mg`` candidate groups (``mc``
candidates each) in flight and only merges a group's results into the
queues when that group completes, refilling the pipeline right after.

All three share the same conventions: nodes are marked visited when their
distance evaluation is scheduled, the result queue's admission threshold is
``+inf`` until it holds ``l`` entries, and ties break by node id.
"""

from __future__ import annotations

import csv
import enum
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .dataset_io import distances
from .graph_index import GraphIndex
from .pqueue import BoundedQueue
from .visited import make_tracker

__all__ = [
    "Algorithm",
    "SearchParams",
    "SearchStats",
    "SearchResult",
    "TraceStep",
    "GroupTask",
    "SequentialEvaluator",
    "bfs_search",
    "mcs_search",
    "dst_search",
    "search",
    "recall_at_k",
    "emit_trace_csv",
    "TRACE_COLUMNS",
]


class Algorithm(str, enum.Enum):
    BFS = "BFS"
    MCS = "MCS"
    DST = "DST"

    @property
    def code(self) -> int:
        return list(Algorithm).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Algorithm":
        return list(Algorithm)[code]

    @classmethod
    def parse(cls, value) -> "Algorithm":
        if isinstance(value, Algorithm):
            return value
        if isinstance(value, (int, np.integer)):
            return cls.from_code(int(value))
        return cls(str(value).upper())


TRACKERS = ("bloom", "exact", "bytearray")
POLICIES = ("fifo_deterministic", "concurrent")


@dataclass(frozen=True)
class SearchParams:
    k: int = 10
    l: int = 64
    mc: int = 1
    mg: int = 1
    algorithm: Algorithm = Algorithm.BFS
    tracker_kind: str = "bloom"
    completion_policy: str = "fifo_deterministic"
    bloom_bits: int = 1 << 18
    bloom_hashes: int = 3
    bloom_shadow: bool = False
    trace: bool = False

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm.parse(self.algorithm))
        if self.k < 1 or self.l < self.k:
            raise ValueError(f"need 1 <= k <= l, got k={self.k}, l={self.l}")
        if self.mc < 1 or self.mg < 1:
            raise ValueError(f"mc and mg must be >= 1, got mc={self.mc}, mg={self.mg}")
        if self.algorithm is Algorithm.BFS and (self.mc, self.mg) != (1, 1):
            raise ValueError("BFS requires mc = mg = 1")
        if self.algorithm is Algorithm.MCS and self.mg != 1:
            raise ValueError("MCS requires mg = 1")
        if self.tracker_kind not in TRACKERS:
            raise ValueError(f"tracker_kind must be one of {TRACKERS}")
        if self.completion_policy not in POLICIES:
            raise ValueError(f"completion_policy must be one of {POLICIES}")

    def replace(self, **changes) -> "SearchParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return SearchParams(**values)

    @classmethod
    def for_cell(cls, mg: int, mc: int, **kw) -> "SearchParams":
        """Parameters for one (mg, mc) cell: BFS at (1, 1), MCS when mg == 1."""
        if mg == 1 and mc == 1:
            algo = Algorithm.BFS
        elif mg == 1:
            algo = Algorithm.MCS
        else:
            algo = Algorithm.DST
        return cls(mg=mg, mc=mc, algorithm=algo, **kw)


class TraceStep(NamedTuple):
    eval_index: int
    candidate_id: int
    candidate_dist: float
    neighbors: Tuple[Tuple[int, float], ...]


@dataclass
class SearchStats:
    hops: int = 0
    visited: int = 0
    dist_computations: int = 0
    bloom_false_positives: int = 0
    trace: Optional[List[TraceStep]] = None
    algorithm: str = "BFS"
    mg: int = 1
    mc: int = 1


@dataclass
class SearchResult:
    neighbors: List[Tuple[int, float]]
    stats: SearchStats = field(default_factory=SearchStats)

    @property
    def ids(self) -> List[int]:
        return [i for i, _ in self.neighbors]

    @property
    def distances(self) -> List[float]:
        return [d for _, d in self.neighbors]


# -- shared plumbing -------------------------------------------------------------


class _Query:
    """Per-query mutable state owned by a single coordinator."""

    def __init__(self, index: GraphIndex, query, params: SearchParams):
        if index.count == 0:
            raise ValueError("cannot search an empty graph")
        q = np.asarray(query, dtype=np.float32).reshape(-1)
        if q.shape[0] != index.dim:
            raise ValueError(f"query dim {q.shape[0]} != index dim {index.dim}")
        if params.k > index.count:
            raise ValueError(f"k={params.k} exceeds node count {index.count}")
        self.index = index
        self.q = q
        self.params = params
        self.C = BoundedQueue(params.l)
        self.R = BoundedQueue(params.l)
        self.tracker = make_tracker(params.tracker_kind, index.count, params.bloom_bits,
                                    params.bloom_hashes, shadow=params.bloom_shadow)
        self.stats = SearchStats(trace=[] if params.trace else None,
                                 algorithm=params.algorithm.value, mg=params.mg, mc=params.mc)
        entry = index.entry_node
        self.entry = (entry, float(distances(index.metric, q, index.data64[entry:entry + 1])[0]))
        self.tracker.insert(entry)
        self.stats.visited = 1
        self.C.insert(*self.entry)
        self.R.insert(*self.entry)

    def threshold(self) -> float:
        return self.R.max_distance(self.params.l)

    def expand(self, candidate: int) -> List[int]:
        """Mark the candidate's unvisited neighbors and return them."""
        fresh = self.tracker.mark_unvisited(self.index.neighbors(candidate))
        self.stats.visited += len(fresh)
        return fresh

    def evaluate(self, ids: Sequence[int]) -> np.ndarray:
        return distances(self.index.metric, self.q, self.index.data64[list(ids)])

    def merge(self, candidate: Tuple[int, float], ids: Sequence[int], dists) -> None:
        stats = self.stats
        stats.hops += 1
        stats.dist_computations += len(ids)
        pairs = tuple(zip(ids, (float(d) for d in dists)))
        for n, d in pairs:
            self.C.insert(n, d)
            self.R.insert(n, d)
        if stats.trace is not None:
            stats.trace.append(TraceStep(len(stats.trace), candidate[0], candidate[1], pairs))

    def finish(self) -> SearchResult:
        self.stats.bloom_false_positives = getattr(self.tracker, "false_positives", 0)
        k = min(self.params.k, len(self.R))
        return SearchResult(self.R.sorted_top_k(k), self.stats)


# -- BFS / MCS ---------------------------------------------------------------------


def bfs_search(index: GraphIndex, query, params: SearchParams = SearchParams()) -> SearchResult:
    """Greedy best-first search: one candidate per synchronized iteration."""
    if params.algorithm is not Algorithm.BFS:
        raise ValueError("bfs_search requires algorithm=BFS")
    st = _Query(index, query, params)
    C = st.C
    while C and C.min()[1] <= st.threshold():
        cand = C.extract_min()
        fresh = st.expand(cand[0])
        st.merge(cand, fresh, st.evaluate(fresh))
    return st.finish()


def mcs_search(index: GraphIndex, query, params: SearchParams) -> SearchResult:
    """Multi-candidate search: up to ``mc`` candidates per synchronized iteration."""
    if params.algorithm is not Algorithm.MCS:
        raise ValueError("mcs_search requires algorithm=MCS")
    st = _Query(index, query, params)
    while True:
        group = st.C.extract_min_threshold(params.mc, st.threshold())
        if not group:
            break
        expanded = [(cand, st.expand(cand[0])) for cand in group]
        for cand, fresh in expanded:
            st.merge(cand, fresh, st.evaluate(fresh))
    return st.finish()


# -- DST -------------------------------------------------------------------------------


@dataclass
class GroupTask:
    """One candidate group handed to an evaluator.

    ``edges`` holds each candidate's full neighbor list (what the Bloom stage
    sees); ``fresh`` the unvisited subset whose distances must be computed.
    ``distances`` is filled in by the evaluator.
    """

    seq: int
    candidates: List[Tuple[int, float]]
    edges: List[np.ndarray]
    fresh: List[List[int]]
    distances: Optional[List[np.ndarray]] = None


def compute_group(index: GraphIndex, q: np.ndarray, task: GroupTask) -> GroupTask:
    data = index.data64
    task.distances = [distances(index.metric, q, data[ids]) for ids in task.fresh]
    return task


class SequentialEvaluator:
    """Evaluates groups in-process; completions come back in launch order."""

    def start(self, index: GraphIndex, q: np.ndarray, params: SearchParams) -> None:
        self.index = index
        self.q = q
        self._pending: Deque[GroupTask] = deque()

    def submit(self, task: GroupTask) -> None:
        self._pending.append(task)

    def wait(self) -> GroupTask:
        return compute_group(self.index, self.q, self._pending.popleft())

    def close(self) -> None:
        self._pending.clear()


def dst_search(index: GraphIndex, query, params: SearchParams, evaluator=None) -> SearchResult:
    """Delayed-synchronization traversal.

    The entry node is extracted and launched as the first group.  Whenever a
    group completes its results are merged, then new groups are launched
    while fewer than ``mg`` are in flight and the candidate queue still holds
    entries within the result queue's threshold.  The search ends when no
    group is in flight and no candidate qualifies.
    """
    evaluator = evaluator if evaluator is not None else SequentialEvaluator()
    st = _Query(index, query, params)
    evaluator.start(index, st.q, params)
    seq = 0

    def launch(group):
        nonlocal seq
        edges = [index.neighbors(c) for c, _ in group]
        fresh = [st.expand(c) for c, _ in group]
        evaluator.submit(GroupTask(seq, group, edges, fresh))
        seq += 1

    try:
        st.C.extract_min()  # the entry is the first group
        launch([st.entry])
        in_flight = 1
        while in_flight > 0:
            done = evaluator.wait()
            in_flight -= 1
            for cand, ids, dists in zip(done.candidates, done.fresh, done.distances):
                st.merge(cand, ids, dists)
            while in_flight < params.mg:
                group = st.C.extract_min_threshold(params.mc, st.threshold())
                if not group:
                    break
                launch(group)
                in_flight += 1
    finally:
        evaluator.close()
    return st.finish()


def search(index: GraphIndex, query, params: SearchParams, evaluator=None) -> SearchResult:
    algo = params.algorithm
    if algo is Algorithm.BFS:
        return bfs_search(index, query, params)
    if algo is Algorithm.MCS:
        return mcs_search(index, query, params)
    return dst_search(index, query, params, evaluator)


# -- evaluation helpers ---------------------------------------------------------------


def recall_at_k(results, ground_truth_row, k: int) -> float:
    """Fraction of the true top-``k`` ids present among the first ``k`` results."""
    truth = np.asarray(ground_truth_row).reshape(-1)
    if truth.shape[0] < k:
        raise ValueError(f"ground truth has {truth.shape[0]} entries, need {k}")
    if isinstance(results, SearchResult):
        ids = results.ids
    else:
        ids = [r[0] if isinstance(r, (tuple, list)) else int(r) for r in results]
    return len(set(ids[:k]) & set(truth[:k].tolist())) / k


TRACE_COLUMNS = ["eval_index", "candidate_id", "candidate_dist", "neighbor_id",
                 "neighbor_dist", "algorithm", "mg", "mc"]


def emit_trace_csv(stats: SearchStats, path: os.PathLike, append: bool = False) -> int:
    """Write one candidate row per evaluation followed by one row per visited neighbor.

    Candidate rows leave the neighbor columns empty.  Returns the number of
    data rows written.
    """
    rows = 0
    mode = "a" if append else "w"
    write_header = not append or not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if write_header:
            w.writerow(TRACE_COLUMNS)
        for step in stats.trace or ():
            tail = [stats.algorithm, stats.mg, stats.mc]
            w.writerow([step.eval_index, step.candidate_id, repr(step.candidate_dist), "", ""] + tail)
            rows += 1
            for n, d in step.neighbors:
                w.writerow([step.eval_index, step.candidate_id, repr(step.candidate_dist),
                            n, repr(d)] + tail)
                rows += 1
    return rows
