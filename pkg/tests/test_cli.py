import csv

import numpy as np
import pytest

from falcon_gvs.cli import main
from falcon_gvs.dataset_io import VectorSet, generate_synthetic, write_fvecs, write_ivecs
from falcon_gvs.graph_index import export_adjacency, load


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    base, queries = generate_synthetic(1500, 8, 1), generate_synthetic(20, 8, 2)
    write_fvecs(d / "base.fvecs", base)
    write_fvecs(d / "q.fvecs", queries)
    write_fvecs(d / "ten.fvecs", generate_synthetic(10, 3, 5))
    assert main(["build", str(d / "base.fvecs"), "--out", str(d / "base.fgvs")]) == 0
    assert main(["gt", str(d / "base.fvecs"), str(d / "q.fvecs"), "--out",
                 str(d / "gt.ivecs"), "--k", "10"]) == 0
    return d


def test_build_small_and_deterministic(files, tmp_path, capsys):
    assert main(["build", str(files / "ten.fvecs"), "--out", str(tmp_path / "a"),
                 "--max-degree", "4", "--seed", "3"]) == 0
    assert "nodes=10" in capsys.readouterr().out
    assert main(["build", str(files / "ten.fvecs"), "--out", str(tmp_path / "b"),
                 "--max-degree", "4", "--seed", "3"]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_usage_and_io_errors(files, tmp_path):
    assert main(["build", str(tmp_path / "missing.fvecs"), "--out", str(tmp_path / "x")]) == 2
    assert main(["bench"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["bench", str(files / "base.fgvs"), str(files / "q.fvecs"),
                 "--repetitions", "0"]) == 2
    assert main(["bench", str(files / "base.fgvs"), str(files / "q.fvecs"), "--gt",
                 str(files / "gt.ivecs"), "--k", "20", "--l", "32"]) == 2


def test_bench_reports_and_csv(files, tmp_path, capsys):
    out = tmp_path / "bench.csv"
    for algo, extra in (("bfs", []), ("dst", ["--mg", "3", "--mc", "2"])):
        assert main(["bench", str(files / "base.fgvs"), str(files / "q.fvecs"), "--gt",
                     str(files / "gt.ivecs"), "--algo", algo, "--csv", str(out),
                     "--repetitions", "2"] + extra) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["algorithm"] for r in rows] == ["BFS", "DST"]
    for r in rows:
        assert float(r["p95_latency_ms"]) >= float(r["median_latency_ms"]) > 0
        assert float(r["qps"]) > 0 and float(r["mean_visited"]) >= float(r["mean_hops"])
    assert float(rows[1]["recall_at_k"]) >= float(rows[0]["recall_at_k"])
    assert "recall_at_k" in capsys.readouterr().out


def test_bench_exact_config_and_verification(tmp_path):
    v, q = generate_synthetic(40, 3, 8), generate_synthetic(5, 3, 9)
    write_fvecs(tmp_path / "v.fvecs", v)
    write_fvecs(tmp_path / "q.fvecs", q)
    # complete graph imported from an adjacency list
    from conftest import complete_graph
    export_adjacency(complete_graph(v), tmp_path / "c.adj")
    assert main(["import", str(tmp_path / "v.fvecs"), str(tmp_path / "c.adj"),
                 "--out", str(tmp_path / "c.fgvs")]) == 0
    assert main(["gt", str(tmp_path / "v.fvecs"), str(tmp_path / "q.fvecs"),
                 "--out", str(tmp_path / "gt.ivecs"), "--k", "5"]) == 0
    args = ["bench", str(tmp_path / "c.fgvs"), str(tmp_path / "q.fvecs"), "--gt",
            str(tmp_path / "gt.ivecs"), "--k", "5", "--l", "40", "--tracker", "exact"]
    assert main(args + ["--min-recall", "1.0", "--csv", str(tmp_path / "r.csv")]) == 0
    assert float(next(csv.DictReader(open(tmp_path / "r.csv")))["recall_at_k"]) == 1.0
    assert main(args[:-2] + ["--l", "5", "--min-recall", "1.01"]) == 1


def test_config_file_and_flag_precedence(files, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nalgo = dst\nmg = 2\nmc=3\nk = 5\n")
    out = tmp_path / "b.csv"
    assert main(["--config", str(cfg), "bench", str(files / "base.fgvs"), str(files / "q.fvecs"),
                 "--mc", "1", "--csv", str(out)]) == 0
    row = next(csv.DictReader(open(out)))
    assert (row["algorithm"], row["mg"], row["mc"], row["k"]) == ("DST", "2", "1", "5")
    cfg.write_text("bogus = 1\n")
    assert main(["--config", str(cfg), "bench", str(files / "base.fgvs"),
                 str(files / "q.fvecs")]) == 2


def test_sweep(files, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert main(["sweep", str(files / "base.fgvs"), str(files / "q.fvecs"), "--mg-max", "1",
                 "--mc-max", "1", "--max-queries", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert len(rows) == 1 and float(rows[0]["speedup"]) == 1.0
    assert main(["sweep", str(files / "base.fgvs"), str(files / "q.fvecs"), "--gt",
                 str(files / "gt.ivecs"), "--mg-max", "2", "--mc-max", "2",
                 "--max-queries", "5", "--out", str(out)]) == 0
    assert "best: mg=" in capsys.readouterr().out
    assert max(float(r["speedup"]) for r in csv.DictReader(open(out))) >= 1.0


def test_figdata(files, tmp_path):
    tr = tmp_path / "traces"
    assert main(["figdata", "fig3_traces", "--index", str(files / "base.fgvs"), "--queries",
                 str(files / "q.fvecs"), "--out", str(tr), "--query-ids", "0"]) == 0
    rows = list(csv.DictReader(open(tr / "trace_q0_dst.csv")))
    assert any(r["neighbor_id"] == "" for r in rows)
    f8 = tmp_path / "f8.csv"
    assert main(["figdata", "fig8_scaling", "--index", str(files / "base.fgvs"), "--queries",
                 str(files / "q.fvecs"), "--out", str(f8), "--units", "1,2",
                 "--max-queries", "3"]) == 0
    assert len(list(csv.DictReader(open(f8)))) == 4
    f2 = tmp_path / "f2.csv"
    assert main(["figdata", "fig2_subgraphs", "--n", "3000", "--dim", "8", "--num-queries",
                 "30", "--parts", "1,2,4", "--out", str(f2)]) == 0
    ratios = [float(r["ratio"]) for r in csv.DictReader(open(f2))]
    assert ratios[0] == 1.0 and ratios == sorted(ratios)
    assert main(["figdata", "fig3_traces", "--out", str(tr)]) == 2
