"""Discrete-event timing model of the search accelerator datapath.

The functional traversal is the regular :func:`~falcon_gvs.traversal.dst_search`
coordinator; :class:`SimEvaluator` plugs into it as the group evaluator and
assigns every sub-step a start and finish cycle.  Six stages are modeled:

====  ==========================================================
S1    pop a candidate from the queue and fetch its edge list
S2    Bloom-filter check, pipelined, one neighbor per cycle
S3    neighbor vector fetch, up to ``max_outstanding`` in flight
S4    distance computation, pipelined
S5    insertion into the candidate/result queues (2 cycles each)
S6    queue sort at a synchronization point (``s - 1`` cycles)
====  ==========================================================

BFS and MCS are the ``mg == 1`` special cases: every group ends with an S6
sort before the next extraction.  With ``mg > 1`` up to ``mg`` groups overlap
and S6 runs only when the oldest in-flight group completes.

Resources (queue, per-unit Bloom/compute pipes, fetch ports and memory
channels) are reserved in event order, and events are processed in
``(cycle, sequence)`` order, so a resource never serves two requests in the
same cycle.
"""

from __future__ import annotations

import csv
import heapq
import math
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dataset_io import VectorSet, brute_force_knn
from .graph_index import GraphIndex
from .traversal import (
    Algorithm,
    GroupTask,
    SearchParams,
    SearchResult,
    compute_group,
    dst_search,
    recall_at_k,
)

__all__ = [
    "HwConfig",
    "SimReport",
    "SimEvaluator",
    "simulate_query",
    "simulate_batch",
    "sweep_mg_mc",
    "simulate_intra_scaling",
    "SweepCell",
    "write_sweep_csv",
    "write_scaling_csv",
    "STAGES",
    "ILLUSTRATIVE_HW",
    "best_cell",
]

STAGES = ("S1", "S2", "S3", "S4", "S5", "S6")


@dataclass(frozen=True)
class HwConfig:
    clock_mhz: float = 200.0
    channels: int = 4
    bfc_units: Optional[int] = None  # defaults to ``channels``
    qpps: int = 1
    mem_latency_cycles: int = 60
    mem_bytes_per_cycle: int = 64
    max_outstanding: int = 64
    queue_insert_cycles_per_elem: int = 2
    queue_pop_cycles: int = 1
    bloom_check_cycles_per_elem: int = 1
    dist_pipeline_depth: int = 8
    dist_elems_per_cycle: int = 16

    def __post_init__(self):
        if self.bfc_units is None:
            object.__setattr__(self, "bfc_units", self.channels)
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f"HwConfig.{name} must be positive, got {value}")

    @staticmethod
    def queue_sort_cycles(s: int) -> int:
        return max(s - 1, 0)

    def beats(self, nbytes: int) -> int:
        return max(1, math.ceil(nbytes / self.mem_bytes_per_cycle))

    def cycles_to_us(self, cycles: float) -> float:
        return cycles / self.clock_mhz


# Short memory latency and a slow, deep distance pipe: one candidate's S3+S4
# span dominates its cycle, which makes the overlap between groups visible on
# small graphs (degree 8, l = 16).
ILLUSTRATIVE_HW = HwConfig(mem_latency_cycles=20, dist_pipeline_depth=20, dist_elems_per_cycle=1)


@dataclass
class SimReport:
    total_cycles: int
    stage_busy: Dict[str, int]
    completed_candidates_timeline: List[Tuple[int, int]]
    visited: int
    hops: int
    result: SearchResult
    stage_intervals: Dict[str, List[Tuple[int, int]]] = field(repr=False, default_factory=dict)
    channel_intervals: List[List[Tuple[int, int]]] = field(repr=False, default_factory=list)

    @property
    def utilization(self) -> Dict[str, float]:
        total = max(self.total_cycles, 1)
        return {s: self.stage_busy[s] / total for s in STAGES}

    def combined_utilization(self, stages: Sequence[str]) -> float:
        """Fraction of cycles during which at least one of ``stages`` is active."""
        spans = [iv for s in stages for iv in self.stage_intervals.get(s, ())]
        return _union_length(spans) / max(self.total_cycles, 1)

    def completed_within(self, window: int) -> int:
        done = 0
        for cycle, count in self.completed_candidates_timeline:
            if cycle > window:
                break
            done = count
        return done

    def latency_us(self, hw: HwConfig) -> float:
        return hw.cycles_to_us(self.total_cycles)

    def channels_exclusive(self) -> bool:
        """True when no two transfers overlap on any memory channel."""
        for spans in self.channel_intervals:
            end = -1
            for a, b in sorted(spans):
                if a < end:
                    return False
                end = b
        return True


def _union_length(intervals) -> int:
    total = 0
    end = -1
    for a, b in sorted(intervals):
        if b <= end:
            continue
        total += b - max(a, end)
        end = b
    return total


class _Port:
    """A resource that accepts one request per ``duration`` cycles, in order."""

    __slots__ = ("free",)

    def __init__(self):
        self.free = 0

    def reserve(self, t: int, duration: int) -> int:
        start = t if t > self.free else self.free
        self.free = start + duration
        return start


class _FetchUnit:
    """Memory fetch port: one issue per cycle, bounded outstanding reads."""

    __slots__ = ("issue", "data", "inflight")

    def __init__(self):
        self.issue = _Port()
        self.data = _Port()
        self.inflight: List[int] = []


@dataclass
class _Group:
    task: GroupTask
    pending: int
    ready: bool = False
    ready_at: int = 0


class SimEvaluator:
    """Group evaluator that advances a cycle-level event model."""

    def __init__(self, hw: HwConfig = HwConfig()):
        self.hw = hw

    # evaluator protocol -------------------------------------------------------

    def start(self, index: GraphIndex, q: np.ndarray, params: SearchParams) -> None:
        hw = self.hw
        self.index = index
        self.q = q
        self.sort_cycles = hw.queue_sort_cycles(params.l)
        self.layout = index.layout
        self.channel_of = lambda v: int(v) % hw.channels
        units = hw.bfc_units
        self.queue = _Port()
        self.bloom = [_Port() for _ in range(units)]
        self.compute = [_Port() for _ in range(units)]
        self.ctrl = _FetchUnit()
        self.fetch = [_FetchUnit() for _ in range(units)]
        self.channel = [_Port() for _ in range(hw.channels)]
        self.vec_beats = hw.beats(index.dim * 4)
        self.compute_ii = max(1, math.ceil(index.dim / hw.dist_elems_per_cycle))
        self.now = 0
        self._events: List[tuple] = []
        self._seq = 0
        self._inflight: deque = deque()
        self._syncing = False
        self._completed: Optional[_Group] = None
        self.completed = 0
        self.timeline: List[Tuple[int, int]] = []
        self.intervals: Dict[str, List[Tuple[int, int]]] = {s: [] for s in STAGES}
        self.channel_intervals: List[List[Tuple[int, int]]] = [[] for _ in range(hw.channels)]

    def submit(self, task: GroupTask) -> None:
        compute_group(self.index, self.q, task)
        group = _Group(task, pending=len(task.candidates) + sum(len(f) for f in task.fresh))
        self._inflight.append(group)
        self._at(self.now, self._launch, group)

    def wait(self) -> GroupTask:
        self._at(self.now, self._try_sync)
        self._completed = None
        while self._completed is None:
            t, _, fn, args = heapq.heappop(self._events)
            self.now = t
            fn(t, *args)
        return self._completed.task

    def close(self) -> None:
        pass

    # event machinery ----------------------------------------------------------

    def _at(self, t: int, fn, *args) -> None:
        heapq.heappush(self._events, (t, self._seq, fn, args))
        self._seq += 1

    def _issue_read(self, t: int, unit: _FetchUnit, channel: int, nbytes: int, stage: str,
                    then, *args) -> None:
        """Issue a read at ``t`` (or later, once an outstanding slot frees up)."""
        hw = self.hw
        infl = unit.inflight
        while infl and infl[0] <= t:
            heapq.heappop(infl)
        if len(infl) >= hw.max_outstanding:
            self._at(infl[0], self._issue_read, unit, channel, nbytes, stage, then, *args)
            return
        issue = unit.issue.reserve(t, 1)
        beats = hw.beats(nbytes)
        chan = self.channel[channel]
        start = max(issue + hw.mem_latency_cycles, chan.free, unit.data.free)
        end = start + beats
        chan.free = end
        unit.data.free = end
        heapq.heappush(infl, end)
        self.channel_intervals[channel].append((start, end))
        self.intervals[stage].append((t, end))
        self._at(end, then, *args)

    def _launch(self, t: int, group: _Group) -> None:
        for pos, (c, _) in enumerate(group.task.candidates):
            start = self.queue.reserve(t, self.hw.queue_pop_cycles)
            self.intervals["S1"].append((start, start + self.hw.queue_pop_cycles))
            edge_bytes = 4 + 4 * len(group.task.edges[pos])
            self._at(start + self.hw.queue_pop_cycles, self._issue_read, self.ctrl,
                     self.channel_of(c), edge_bytes, "S1", self._edges_ready, group, pos)

    def _edges_ready(self, t: int, group: _Group, pos: int) -> None:
        hw = self.hw
        units = hw.bfc_units
        fresh = set(group.task.fresh[pos])
        last = t
        for v in group.task.edges[pos].tolist():
            u = self.channel_of(v) % units
            start = self.bloom[u].reserve(t, hw.bloom_check_cycles_per_elem)
            done = start + hw.bloom_check_cycles_per_elem
            self.intervals["S2"].append((start, done))
            last = max(last, done)
            if v in fresh:
                self._at(done, self._issue_read, self.fetch[u], self.channel_of(v),
                         self.index.dim * 4, "S3", self._vector_ready, group, u)
        self._at(last, self._token_done, group)

    def _vector_ready(self, t: int, group: _Group, u: int) -> None:
        start = self.compute[u].reserve(t, self.compute_ii)
        done = start + self.compute_ii + self.hw.dist_pipeline_depth
        self.intervals["S4"].append((start, done))
        self._at(done, self._insert, group)

    def _insert(self, t: int, group: _Group) -> None:
        cycles = self.hw.queue_insert_cycles_per_elem
        start = self.queue.reserve(t, cycles)
        self.intervals["S5"].append((start, start + cycles))
        self._at(start + cycles, self._token_done, group)

    def _token_done(self, t: int, group: _Group) -> None:
        group.pending -= 1
        if group.pending == 0:
            group.ready = True
            group.ready_at = t
            self._try_sync(t)

    def _try_sync(self, t: int) -> None:
        if self._syncing or not self._inflight or not self._inflight[0].ready:
            return
        self._syncing = True
        start = self.queue.reserve(t, self.sort_cycles)
        end = start + self.sort_cycles
        self.intervals["S6"].append((start, end))
        self._at(end, self._sync_done)

    def _sync_done(self, t: int) -> None:
        group = self._inflight.popleft()
        self._syncing = False
        self.completed += len(group.task.candidates)
        self.timeline.append((t, self.completed))
        self._completed = group

    def report(self, result: SearchResult) -> SimReport:
        total = self.timeline[-1][0] if self.timeline else 0
        busy = {s: _union_length(self.intervals[s]) for s in STAGES}
        return SimReport(total, busy, list(self.timeline), result.stats.visited,
                         result.stats.hops, result, self.intervals, self.channel_intervals)


def _as_dst(params: SearchParams) -> SearchParams:
    return params.replace(algorithm=Algorithm.DST, completion_policy="fifo_deterministic")


def simulate_query(index: GraphIndex, query, params: SearchParams,
                   hw: HwConfig = HwConfig()) -> SimReport:
    """Run one query through the functional engine while timing it."""
    ev = SimEvaluator(hw)
    result = dst_search(index, query, _as_dst(params), ev)
    result.stats.algorithm = params.algorithm.value
    return ev.report(result)


def simulate_batch(index: GraphIndex, queries, params: SearchParams,
                   hw: HwConfig = HwConfig()) -> List[SimReport]:
    return [simulate_query(index, q, params, hw) for q in np.asarray(queries, dtype=np.float32)]


# -- sweeps ----------------------------------------------------------------------------


@dataclass
class SweepCell:
    mg: int
    mc: int
    speedup: float
    hops: float
    recall: float
    cycles: float
    util_s3s4: float


def _ground_truth(index: GraphIndex, queries: np.ndarray, k: int) -> np.ndarray:
    base = VectorSet(index.vectors.data, index.metric)
    return np.array([[i for i, _ in brute_force_knn(base, q, k)] for q in queries])


def _run_cell(args):
    index, queries, gt, params, hw = args
    reports = simulate_batch(index, queries, params, hw)
    k = params.k
    return (
        float(np.mean([r.total_cycles for r in reports])),
        float(np.mean([r.hops for r in reports])),
        float(np.mean([recall_at_k(r.result, g, k) for r, g in zip(reports, gt)])),
        float(np.mean([r.combined_utilization(("S3", "S4")) for r in reports])),
    )


def sweep_mg_mc(index: GraphIndex, queries, params_base: SearchParams = SearchParams(),
                hw: HwConfig = HwConfig(), mg_range: Sequence[int] = range(1, 7),
                mc_range: Sequence[int] = range(1, 5), ground_truth=None,
                n_jobs: int = 1) -> List[SweepCell]:
    """Simulate every (mg, mc) cell; speedup is mean BFS cycles / mean cell cycles."""
    mg_range, mc_range = list(mg_range), list(mc_range)
    if not mg_range or not mc_range:
        raise ValueError("mg_range and mc_range must be non-empty")
    queries = np.asarray(queries, dtype=np.float32).reshape(-1, index.dim)
    gt = (_ground_truth(index, queries, params_base.k) if ground_truth is None
          else np.asarray(ground_truth)[:, : params_base.k])
    base_kw = dict(k=params_base.k, l=params_base.l, tracker_kind=params_base.tracker_kind,
                   bloom_bits=params_base.bloom_bits, bloom_hashes=params_base.bloom_hashes)
    grid = [(mg, mc) for mg in mg_range for mc in mc_range]
    if (1, 1) not in grid:
        grid.insert(0, (1, 1))
    jobs = [(index, queries, gt, SearchParams.for_cell(mg, mc, **base_kw), hw) for mg, mc in grid]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            outcomes = list(ex.map(_run_cell, jobs))
    else:
        outcomes = [_run_cell(j) for j in jobs]
    by_cell = dict(zip(grid, outcomes))
    base_cycles = by_cell[(1, 1)][0]
    cells = []
    for mg, mc in [(mg, mc) for mg in mg_range for mc in mc_range]:
        cycles, hops, rec, util = by_cell[(mg, mc)]
        cells.append(SweepCell(mg, mc, base_cycles / cycles, hops, rec, cycles, util))
    return cells


def best_cell(cells: Sequence[SweepCell]) -> SweepCell:
    return max(cells, key=lambda c: (c.speedup, -c.mg, -c.mc))


def simulate_intra_scaling(index: GraphIndex, queries, params: SearchParams,
                           hw: HwConfig = HwConfig(), bfc_counts: Sequence[int] = (1, 2, 3, 4)
                           ) -> List[dict]:
    """Mean latency per BFC-unit count for BFS and for ``params``' DST setting.

    Each algorithm's speedup is normalized to its own single-unit latency.
    """
    bfc_counts = list(bfc_counts)
    if not bfc_counts:
        raise ValueError("bfc_counts must be non-empty")
    queries = np.asarray(queries, dtype=np.float32).reshape(-1, index.dim)
    kw = dict(k=params.k, l=params.l, tracker_kind=params.tracker_kind,
              bloom_bits=params.bloom_bits, bloom_hashes=params.bloom_hashes)
    variants = [("BFS", SearchParams.for_cell(1, 1, **kw)),
                ("DST", SearchParams.for_cell(params.mg, params.mc, **kw))]
    rows = []
    for algo, p in variants:
        base = None
        for units in sorted(set(bfc_counts) | {1}):
            lat = float(np.mean([r.total_cycles for r in
                                 simulate_batch(index, queries, p, replace(hw, bfc_units=units))]))
            base = lat if units == 1 else base
            if units in bfc_counts:
                rows.append({"units": units, "algo": algo, "mg": p.mg, "mc": p.mc,
                             "latency_cycles": lat, "speedup": base / lat})
    return rows


def write_sweep_csv(cells: Sequence[SweepCell], path: os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mg", "mc", "speedup", "hops", "recall", "cycles", "util_s3s4"])
        for c in cells:
            w.writerow([c.mg, c.mc, f"{c.speedup:.6f}", f"{c.hops:.3f}", f"{c.recall:.6f}",
                        f"{c.cycles:.1f}", f"{c.util_s3s4:.6f}"])


def write_scaling_csv(rows: Sequence[dict], path: os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["units", "algo", "latency_cycles", "speedup", "mg", "mc"])
        for r in rows:
            w.writerow([r["units"], r["algo"], f"{r['latency_cycles']:.1f}",
                        f"{r['speedup']:.6f}", r["mg"], r["mc"]])
