"""Command-line entry point: ``falcon-gvs <command> [options]``.

Commands
--------
build     fvecs -> graph index (FGVS file)
import    fvecs + external adjacency list -> graph index
gt        exact ground truth (ivecs) for a query file
bench     latency / QPS / recall benchmark
sweep     simulated (mg, mc) heatmap
figdata   plot-ready CSVs: fig2_subgraphs, fig3_traces, fig8_scaling
serve     TCP search service

Any option can also come from ``--config FILE`` holding ``key = value``
lines (keys use the option's long name, dashes or underscores); explicit
flags win over the file.

Exit status: 0 success, 1 verification failure (e.g. ``--min-recall`` not
met), 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence

import numpy as np

from .dataset_io import (
    FormatError,
    Metric,
    VectorSet,
    compute_ground_truth,
    generate_synthetic,
    read_fvecs,
    read_ivecs,
    write_ivecs,
)
from .falcon_sim import (
    HwConfig,
    best_cell,
    simulate_intra_scaling,
    sweep_mg_mc,
    write_scaling_csv,
    write_sweep_csv,
)
from .graph_index import GraphFormatError, ImportReport, build_graph, import_adjacency, load, save
from .parallel_exec import EngineConfig, search_batch_across, search_intra, subgraph_overhead
from .traversal import Algorithm, SearchParams, emit_trace_csv, recall_at_k, search

log = logging.getLogger("falcon_gvs")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2

BENCH_COLUMNS = ["algorithm", "k", "l", "mg", "mc", "mode", "units", "pipelines", "queries",
                 "repetitions", "mean_latency_ms", "median_latency_ms", "p95_latency_ms", "qps",
                 "recall_at_k", "mean_hops", "mean_visited"]


class UsageError(Exception):
    pass


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _search_args(p: argparse.ArgumentParser, algo_default: str = "bfs") -> None:
    g = p.add_argument_group("search")
    g.add_argument("--algo", default=algo_default, choices=["bfs", "mcs", "dst"])
    g.add_argument("--k", type=int, default=10)
    g.add_argument("--l", type=int, default=64, help="candidate/result queue size")
    g.add_argument("--mg", type=int, default=1)
    g.add_argument("--mc", type=int, default=1)
    g.add_argument("--tracker", default="bloom", choices=["bloom", "exact", "bytearray"])
    g.add_argument("--bloom-bits", type=int, default=1 << 18)
    g.add_argument("--bloom-hashes", type=int, default=3)


def _hw_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("simulated hardware")
    g.add_argument("--channels", type=int, default=4)
    g.add_argument("--bfc-units", type=int, default=None)
    g.add_argument("--mem-latency", type=int, default=60, help="cycles per random access")
    g.add_argument("--max-outstanding", type=int, default=64)
    g.add_argument("--clock-mhz", type=float, default=200.0)


def _params(a) -> SearchParams:
    algo = Algorithm.parse(a.algo)
    return SearchParams(k=a.k, l=a.l, algorithm=algo,
                        mg=a.mg if algo is Algorithm.DST else 1,
                        mc=1 if algo is Algorithm.BFS else a.mc,
                        tracker_kind=a.tracker, bloom_bits=a.bloom_bits,
                        bloom_hashes=a.bloom_hashes)


def _hw(a) -> HwConfig:
    return HwConfig(clock_mhz=a.clock_mhz, channels=a.channels, bfc_units=a.bfc_units,
                    mem_latency_cycles=a.mem_latency, max_outstanding=a.max_outstanding)


def _queries(path: str, index, limit: Optional[int] = None) -> np.ndarray:
    q = read_fvecs(path).data
    if q.shape[0] and q.shape[1] != index.dim:
        raise UsageError(f"queries have dim {q.shape[1]}, index has dim {index.dim}")
    return q[:limit] if limit else q


def _ground_truth(path: Optional[str], nq: int, k: int) -> Optional[np.ndarray]:
    if path is None:
        return None
    gt = read_ivecs(path)
    if gt.num_queries < nq or gt.k_gt < k:
        raise UsageError(f"ground truth is {gt.num_queries}x{gt.k_gt}, need {nq}x{k}")
    return gt.ids[:nq]


# -- commands ------------------------------------------------------------------------------


def cmd_build(a) -> int:
    vectors = read_fvecs(a.dataset)
    if vectors.count == 0:
        raise UsageError(f"{a.dataset} holds no vectors")
    vectors = vectors.with_metric(a.metric)
    t0 = time.perf_counter()
    index = build_graph(vectors, a.max_degree, a.ef, a.seed, channel_count=a.channels,
                        entry=a.entry)
    save(index, a.out)
    deg = index.degrees
    print(f"nodes={index.count} dim={index.dim} edges={index.num_edges} "
          f"degree(min/mean/max)={deg.min()}/{deg.mean():.2f}/{deg.max()} "
          f"entry={index.entry_node} build_s={time.perf_counter() - t0:.2f} -> {a.out}")
    return EXIT_OK


def cmd_import(a) -> int:
    vectors = read_fvecs(a.vectors)
    report = ImportReport()
    index = import_adjacency(vectors, a.adjacency, entry_node=a.entry_node, metric=a.metric,
                             channel_count=a.channels, report=report)
    save(index, a.out)
    print(f"nodes={index.count} edges={index.num_edges} self_loops={report.dropped_self_loops} "
          f"duplicates={report.dropped_duplicates} -> {a.out}")
    return EXIT_OK


def cmd_gt(a) -> int:
    base = read_fvecs(a.base).with_metric(a.metric)
    queries = read_fvecs(a.queries)
    gt = compute_ground_truth(base, queries, a.k)
    write_ivecs(a.out, gt)
    print(f"queries={gt.num_queries} k={gt.k_gt} -> {a.out}")
    return EXIT_OK


def _bench_once(index, queries, params: SearchParams, config: EngineConfig, pool):
    latencies, results = [], []
    t0 = time.perf_counter()
    if config.mode == "across_query" and config.pipelines > 1:
        results = search_batch_across(index, queries, params, config)
        wall = time.perf_counter() - t0
        # per-query latency is taken from a sequential pass
        for q in queries:
            s = time.perf_counter()
            search(index, q, params)
            latencies.append(time.perf_counter() - s)
        return results, latencies, wall
    for q in queries:
        s = time.perf_counter()
        if config.mode == "intra_query":
            results.append(search_intra(index, q, params, config, executor=pool))
        else:
            results.append(search(index, q, params))
        latencies.append(time.perf_counter() - s)
    return results, latencies, time.perf_counter() - t0


def cmd_bench(a) -> int:
    if a.repetitions < 1:
        raise UsageError("--repetitions must be >= 1")
    index = load(a.index)
    queries = _queries(a.queries, index, a.max_queries)
    gt = _ground_truth(a.gt, len(queries), a.k)
    params = _params(a)
    config = EngineConfig(mode=a.mode, units=a.units, pipelines=a.pipelines, backend=a.backend)
    pool = ThreadPoolExecutor(max_workers=a.units) if a.mode == "intra_query" else None
    try:
        lat, wall_total, results = [], 0.0, []
        for _ in range(a.repetitions):
            results, l_once, wall = _bench_once(index, queries, params, config, pool)
            lat.extend(l_once)
            wall_total += wall
    finally:
        if pool is not None:
            pool.shutdown()
    lat_ms = np.asarray(lat) * 1e3
    recall = (float(np.mean([recall_at_k(r, g, a.k) for r, g in zip(results, gt)]))
              if gt is not None else float("nan"))
    row = {
        "algorithm": params.algorithm.value, "k": params.k, "l": params.l, "mg": params.mg,
        "mc": params.mc, "mode": a.mode, "units": a.units, "pipelines": a.pipelines,
        "queries": len(queries), "repetitions": a.repetitions,
        "mean_latency_ms": float(lat_ms.mean()), "median_latency_ms": float(np.median(lat_ms)),
        "p95_latency_ms": float(np.percentile(lat_ms, 95)),
        "qps": len(queries) * a.repetitions / wall_total if wall_total > 0 else float("inf"),
        "recall_at_k": recall,
        "mean_hops": float(np.mean([r.stats.hops for r in results])),
        "mean_visited": float(np.mean([r.stats.visited for r in results])),
    }
    for key in BENCH_COLUMNS:
        val = row[key]
        print(f"{key:>18}: {val:.4f}" if isinstance(val, float) else f"{key:>18}: {val}")
    if a.csv:
        new = not os.path.exists(a.csv) or os.path.getsize(a.csv) == 0
        with open(a.csv, "a", newline="") as fh:
            w = csv.DictWriter(fh, BENCH_COLUMNS)
            if new:
                w.writeheader()
            w.writerow(row)
    if a.min_recall is not None:
        if gt is None:
            raise UsageError("--min-recall needs --gt")
        if not recall >= a.min_recall:
            print(f"FAIL: recall {recall:.4f} < {a.min_recall}", file=sys.stderr)
            return EXIT_VERIFY
    return EXIT_OK


def cmd_sweep(a) -> int:
    index = load(a.index)
    queries = _queries(a.queries, index, a.max_queries)
    gt = _ground_truth(a.gt, len(queries), a.k)
    base = SearchParams(k=a.k, l=a.l, tracker_kind=a.tracker, bloom_bits=a.bloom_bits,
                        bloom_hashes=a.bloom_hashes)
    cells = sweep_mg_mc(index, queries, base, _hw(a), range(1, a.mg_max + 1),
                        range(1, a.mc_max + 1), ground_truth=gt, n_jobs=a.jobs)
    if a.out:
        write_sweep_csv(cells, a.out)
    print("mg,mc,speedup,hops,recall")
    for c in cells:
        print(f"{c.mg},{c.mc},{c.speedup:.3f},{c.hops:.1f},{c.recall:.4f}")
    top = best_cell(cells)
    print(f"best: mg={top.mg} mc={top.mc} speedup={top.speedup:.3f} recall={top.recall:.4f}")
    return EXIT_OK


def cmd_figdata(a) -> int:
    os.makedirs(os.path.dirname(os.path.abspath(a.out)) or ".", exist_ok=True)
    if a.kind == "fig2_subgraphs":
        if a.dataset:
            vectors = read_fvecs(a.dataset).with_metric(a.metric)
            queries = read_fvecs(a.queries).data
        else:
            vectors = generate_synthetic(a.n, a.dim, a.seed, metric=a.metric)
            queries = generate_synthetic(a.num_queries, a.dim, a.seed + 1).data
        gt = compute_ground_truth(vectors, VectorSet(queries), a.k).ids
        points = subgraph_overhead(vectors, queries, gt, a.parts, a.target_recall,
                                   SearchParams(k=a.k), a.max_degree, a.ef, a.seed)
        with open(a.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["parts", "visited", "ratio", "l"])
            for p in points:
                w.writerow([p.parts, f"{p.visited:.3f}", f"{p.ratio:.6f}", f"{p.l:.3f}"])
                print(f"parts={p.parts} visited={p.visited:.1f} ratio={p.ratio:.3f}")
        return EXIT_OK
    if not a.index or not a.queries:
        raise UsageError(f"{a.kind} needs --index and --queries")
    index = load(a.index)
    queries = _queries(a.queries, index)
    if a.kind == "fig3_traces":
        os.makedirs(a.out, exist_ok=True)
        ids = a.query_ids or [0]
        for qi in ids:
            if not 0 <= qi < len(queries):
                raise UsageError(f"query id {qi} out of range")
            for algo, mg, mc in (("bfs", 1, 1), ("mcs", 1, a.mc), ("dst", a.mg, a.mc)):
                p = SearchParams(k=a.k, l=a.l, algorithm=Algorithm.parse(algo), mg=mg,
                                 mc=mc, trace=True)
                res = search(index, queries[qi], p)
                path = os.path.join(a.out, f"trace_q{qi}_{algo}.csv")
                rows = emit_trace_csv(res.stats, path)
                print(f"{path}: {res.stats.hops} candidates, {rows} rows")
        return EXIT_OK
    # fig8_scaling
    params = SearchParams.for_cell(a.mg, a.mc, k=a.k, l=a.l)
    rows = simulate_intra_scaling(index, queries[: a.max_queries], params, _hw(a), a.units)
    write_scaling_csv(rows, a.out)
    for r in rows:
        print(f"{r['algo']} units={r['units']} latency={r['latency_cycles']:.0f} "
              f"speedup={r['speedup']:.3f}")
    return EXIT_OK


def cmd_serve(a) -> int:
    from .netsvc import serve

    index = load(a.index)
    config = EngineConfig(mode=a.mode, units=a.units, pipelines=a.pipelines)
    logging.basicConfig(level=logging.INFO)
    serve(index, _params(a), config, port=a.port, host=a.host)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="falcon-gvs", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="key=value file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="build a graph index from an fvecs file")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--max-degree", type=int, default=16)
    p.add_argument("--ef", type=int, default=64, help="construction beam width")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", default="l2", type=Metric.parse)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--entry", default="medoid", choices=["medoid", "first"])
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("import", help="wrap an external adjacency list as an index")
    p.add_argument("vectors")
    p.add_argument("adjacency")
    p.add_argument("--out", required=True)
    p.add_argument("--entry-node", type=int, default=0)
    p.add_argument("--metric", default="l2", type=Metric.parse)
    p.add_argument("--channels", type=int, default=4)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("gt", help="exact ground truth as ivecs")
    p.add_argument("base")
    p.add_argument("queries")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--metric", default="l2", type=Metric.parse)
    p.set_defaults(func=cmd_gt)

    p = sub.add_parser("bench", help="latency/QPS/recall benchmark",
                       description="CSV columns: " + ",".join(BENCH_COLUMNS))
    p.add_argument("index")
    p.add_argument("queries")
    p.add_argument("--gt")
    _search_args(p)
    p.add_argument("--mode", default="across_query", choices=["across_query", "intra_query"])
    p.add_argument("--units", type=int, default=4)
    p.add_argument("--pipelines", type=int, default=1)
    p.add_argument("--backend", default="process", choices=["process", "thread"])
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--max-queries", type=int)
    p.add_argument("--csv", help="append the summary row to this CSV")
    p.add_argument("--min-recall", type=float, help="exit 1 when mean R@k is below this")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", help="simulated (mg, mc) heatmap",
                       description="CSV columns: mg,mc,speedup,hops,recall,cycles,util_s3s4")
    p.add_argument("index")
    p.add_argument("queries")
    p.add_argument("--gt")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--l", type=int, default=64)
    p.add_argument("--tracker", default="bloom", choices=["bloom", "exact", "bytearray"])
    p.add_argument("--bloom-bits", type=int, default=1 << 18)
    p.add_argument("--bloom-hashes", type=int, default=3)
    p.add_argument("--mg-max", type=int, default=6)
    p.add_argument("--mc-max", type=int, default=4)
    p.add_argument("--max-queries", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="heatmap CSV path")
    _hw_args(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("figdata", help="plot-ready experiment CSVs",
                       description="fig2_subgraphs: parts,visited,ratio,l | fig3_traces: one "
                       "trace CSV per (query, algorithm) in the --out directory | "
                       "fig8_scaling: units,algo,latency_cycles,speedup,mg,mc")
    p.add_argument("kind", choices=["fig2_subgraphs", "fig3_traces", "fig8_scaling"])
    p.add_argument("--out", required=True)
    p.add_argument("--index")
    p.add_argument("--queries")
    p.add_argument("--dataset", help="fig2: base fvecs (default: synthetic)")
    p.add_argument("--n", type=int, default=20000, help="fig2 synthetic size")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--num-queries", type=int, default=100)
    p.add_argument("--parts", type=_int_list, default=[1, 2, 4, 8])
    p.add_argument("--target-recall", type=float, default=0.90)
    p.add_argument("--max-degree", type=int, default=16)
    p.add_argument("--ef", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", default="l2", type=Metric.parse)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--l", type=int, default=64)
    p.add_argument("--mg", type=int, default=3)
    p.add_argument("--mc", type=int, default=4)
    p.add_argument("--query-ids", type=_int_list)
    p.add_argument("--units", type=_int_list, default=[1, 2, 3, 4])
    p.add_argument("--max-queries", type=int, default=100)
    _hw_args(p)
    p.set_defaults(func=cmd_figdata)

    p = sub.add_parser("serve", help="run the TCP search service")
    p.add_argument("index")
    p.add_argument("--port", type=int, default=7878)
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--mode", default="across_query", choices=["across_query", "intra_query"])
    p.add_argument("--units", type=int, default=4)
    p.add_argument("--pipelines", type=int, default=4)
    _search_args(p)
    p.set_defaults(func=cmd_serve)
    return parser


def _read_config(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str], config: dict):
    """Re-parse with config values installed as defaults so explicit flags win."""
    ns = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in config.items():
        action = actions.get(key)
        if action is None or not action.option_strings:
            raise UsageError(f"unknown config key {key!r} for {ns.command}")
        if action.type is not None:
            value = action.type(raw)
        elif isinstance(action.default, bool) or action.nargs == 0:
            value = raw.lower() in ("1", "true", "yes", "on")
        else:
            value = raw
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"config {key}={raw!r} not in {sorted(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        if args.config:
            args = _apply_config(parser, argv, _read_config(args.config))
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (UsageError, FormatError, GraphFormatError, OSError, ValueError,
            argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
