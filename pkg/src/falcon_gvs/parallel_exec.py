"""Across-query, intra-query and partitioned execution modes.

* across-query: independent coordinators ("pipelines") each run whole
  queries with a single evaluation worker.
* intra-query: one coordinator dispatches candidate groups to ``units``
  workers, one group per task.
* partitioned: the data set is split into subgraphs, each searched on its
  own, and the per-part results are merged.
"""

from __future__ import annotations

import heapq
import time
from collections import deque
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .graph_index import GraphIndex, SubgraphSet
from .dataset_io import VectorSet
from .graph_index import split_subgraphs
from .traversal import (
    Algorithm,
    GroupTask,
    SearchParams,
    SearchResult,
    SearchStats,
    compute_group,
    search,
)

__all__ = [
    "EngineConfig",
    "WorkerPoolEvaluator",
    "search_batch_across",
    "search_intra",
    "search_partitioned",
    "OverheadPoint",
    "recall_visited_curve",
    "visited_at_recall",
    "subgraph_overhead",
]

MODES = ("across_query", "intra_query", "partitioned")


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "across_query"
    units: int = 4
    pipelines: int = 1
    backend: str = "process"  # across-query worker backend: "process" or "thread"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.units < 1 or self.pipelines < 1:
            raise ValueError("units and pipelines must be >= 1")
        if self.backend not in ("process", "thread"):
            raise ValueError("backend must be 'process' or 'thread'")


class WorkerPoolEvaluator:
    """Evaluates candidate groups on a thread pool.

    Under ``fifo_deterministic`` completions are handed back in launch order;
    under ``concurrent`` whichever group finished first is returned.
    """

    def __init__(self, units: int = 4, executor: Optional[ThreadPoolExecutor] = None):
        self.units = units
        self._own = executor is None
        self._executor = executor

    def start(self, index: GraphIndex, q: np.ndarray, params: SearchParams) -> None:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.units,
                                                thread_name_prefix="bfc")
        self.index = index
        self.q = q
        self.fifo = params.completion_policy == "fifo_deterministic"
        self._futures = deque()

    def _run(self, task: GroupTask):
        compute_group(self.index, self.q, task)
        return time.perf_counter_ns(), task

    def submit(self, task: GroupTask) -> None:
        self._futures.append(self._executor.submit(self._run, task))

    def wait(self) -> GroupTask:
        if self.fifo:
            return self._futures.popleft().result()[1]
        done, _ = wait(self._futures, return_when=FIRST_COMPLETED)
        first = min(done, key=lambda f: f.result()[0])
        self._futures.remove(first)
        return first.result()[1]

    def close(self) -> None:
        for f in self._futures:
            f.cancel()
        self._futures.clear()
        if self._own and self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None


# -- across-query ----------------------------------------------------------------------

_WORKER_INDEX: Optional[GraphIndex] = None


def _init_worker(index: GraphIndex) -> None:
    global _WORKER_INDEX
    _WORKER_INDEX = index


def _run_chunk(queries: np.ndarray, params: SearchParams) -> List[SearchResult]:
    return [search(_WORKER_INDEX, q, params) for q in queries]


def search_batch_across(index: GraphIndex, queries, params: SearchParams,
                        config: EngineConfig = EngineConfig()) -> List[SearchResult]:
    """Run every query independently; results come back in input order."""
    if config.mode != "across_query":
        raise ValueError("search_batch_across requires mode='across_query'")
    queries = np.asarray(queries, dtype=np.float32)
    if queries.size == 0:
        return []
    queries = queries.reshape(-1, index.dim)
    if config.pipelines == 1:
        return [search(index, q, params) for q in queries]
    if config.backend == "thread":
        with ThreadPoolExecutor(max_workers=config.pipelines) as ex:
            return list(ex.map(lambda q: search(index, q, params), queries))
    chunks = np.array_split(queries, min(len(queries), config.pipelines * 4))
    with ProcessPoolExecutor(max_workers=config.pipelines, initializer=_init_worker,
                             initargs=(index,)) as ex:
        parts = ex.map(_run_chunk, chunks, [params] * len(chunks))
        return [r for part in parts for r in part]


# -- intra-query ---------------------------------------------------------------------------


def search_intra(index: GraphIndex, query, params: SearchParams,
                 config: EngineConfig = EngineConfig(mode="intra_query"),
                 executor: Optional[ThreadPoolExecutor] = None) -> SearchResult:
    """Single-query search whose candidate groups are spread over ``units`` workers."""
    if config.mode != "intra_query":
        raise ValueError("search_intra requires mode='intra_query'")
    label = params.algorithm
    if label is not Algorithm.DST:
        # BFS / MCS map onto DST with a single group in flight
        params = params.replace(algorithm=Algorithm.DST)
    result = search(index, query, params, WorkerPoolEvaluator(config.units, executor))
    result.stats.algorithm = label.value
    return result


# -- partitioned -----------------------------------------------------------------------------


def search_partitioned(subgraphs: SubgraphSet, query, params: SearchParams,
                       part_l: Optional[int] = None) -> SearchResult:
    """Search each part independently and merge into a global top-k.

    ``part_l`` overrides the per-part candidate list size; a part searched
    with ``part_l < k`` contributes its best ``part_l`` nodes.
    """
    if not subgraphs.parts:
        raise ValueError("empty SubgraphSet")
    if params.k > subgraphs.count:
        raise ValueError(f"k={params.k} exceeds total node count {subgraphs.count}")
    if part_l is not None and part_l < 1:
        raise ValueError("part_l must be >= 1")
    merged = []
    stats = SearchStats(algorithm=params.algorithm.value, mg=params.mg, mc=params.mc)
    for part, gids in zip(subgraphs.parts, subgraphs.global_ids):
        l = params.l if part_l is None else part_l
        k = min(params.k, l, part.count)
        sub = search(part, query, params.replace(k=k, l=max(l, k), trace=False))
        merged.extend((int(gids[i]), d) for i, d in sub.neighbors)
        stats.hops += sub.stats.hops
        stats.visited += sub.stats.visited
        stats.dist_computations += sub.stats.dist_computations
        stats.bloom_false_positives += sub.stats.bloom_false_positives
    top = heapq.nsmallest(params.k, merged, key=lambda p: (p[1], p[0]))
    return SearchResult(top, stats)


# -- single graph versus subgraphs ----------------------------------------------------

DEFAULT_L_GRID = (2, 3, 4, 5, 6, 8, 10, 12, 14, 16, 20, 24, 28, 32, 40, 48, 64, 80, 96, 128, 160, 192, 256)


@dataclass
class OverheadPoint:
    parts: int
    visited: float  # mean summed visited nodes per query at the target recall
    ratio: float  # visited / single-graph visited
    l: float  # (interpolated) per-part candidate list size reaching the target


def recall_visited_curve(target, queries, ground_truth, params: SearchParams,
                         l_grid: Sequence[int] = DEFAULT_L_GRID,
                         stop_at: Optional[float] = None) -> List[tuple]:
    """Mean ``(l, recall, visited)`` for each ``l`` in ``l_grid``.

    ``target`` is a :class:`GraphIndex` or a :class:`SubgraphSet`; for the
    latter ``l`` is the per-part list size and may be below ``k``.  The scan
    stops at the first ``l`` whose recall reaches ``stop_at``.
    """
    from .traversal import recall_at_k

    parted = isinstance(target, SubgraphSet)
    gt = np.asarray(ground_truth)
    rows = []
    for l in l_grid:
        if parted:
            p = params.replace(l=max(int(l), params.k), trace=False)
            results = [search_partitioned(target, q, p, part_l=int(l)) for q in queries]
        elif l < params.k:
            continue
        else:
            p = params.replace(l=int(l), trace=False)
            results = [search(target, q, p) for q in queries]
        rec = float(np.mean([recall_at_k(r, g, p.k) for r, g in zip(results, gt)]))
        vis = float(np.mean([r.stats.visited for r in results]))
        rows.append((int(l), rec, vis))
        if stop_at is not None and rec >= stop_at:
            break
    return rows


def visited_at_recall(curve: Sequence[tuple], target: float) -> Tuple[float, float]:
    """Linearly interpolate ``(l, visited)`` where the curve crosses ``target``.

    If even the smallest ``l`` exceeds the target, that first point is used.
    """
    prev = None
    for l, rec, vis in curve:
        if rec >= target:
            if prev is None or prev[1] >= rec:
                return float(l), vis
            pl, pr, pv = prev
            f = (target - pr) / (rec - pr)
            return pl + f * (l - pl), pv + f * (vis - pv)
        prev = (l, rec, vis)
    raise ValueError(f"recall {target} not reached; best was {max(c[1] for c in curve):.4f}")


def subgraph_overhead(vectors: VectorSet, queries, ground_truth, parts_list=(1, 2, 4, 8),
                      target_recall: float = 0.90, params: SearchParams = SearchParams(),
                      max_degree: int = 16, ef_construction: int = 64, seed: int = 0,
                      l_grid: Sequence[int] = DEFAULT_L_GRID,
                      single=None) -> List[OverheadPoint]:
    """Visited nodes needed to reach ``target_recall`` on ``parts`` subgraphs.

    ``single`` may supply a prebuilt whole-data graph for ``parts == 1``.
    """
    queries = np.asarray(queries, dtype=np.float32).reshape(-1, vectors.dim)
    points, base = [], None
    for parts in sorted(set(parts_list) | {1}):
        if parts == 1 and single is not None:
            target = single
        else:
            sub = split_subgraphs(vectors, parts, max_degree, ef_construction, seed)
            target = sub.parts[0] if parts == 1 else sub
        curve = recall_visited_curve(target, queries, ground_truth, params, l_grid,
                                     stop_at=target_recall)
        l, vis = visited_at_recall(curve, target_recall)
        base = vis if parts == 1 else base
        if parts in parts_list:
            points.append(OverheadPoint(parts, vis, vis / base, l))
    return points
