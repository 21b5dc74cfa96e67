import json

import pytest

from tgsample.bench import MIN_EVENTS, BenchError, Workload, run_bench, sampling_micro, scoring_scaling
from tgsample.synthgen import gen_uci_like

SMALL = Workload(num_nodes=200, num_events=MIN_EVENTS, k=4, n_pool=8, window=200)


@pytest.fixture(scope="module")
def report():
    ds = gen_uci_like(SMALL.seed, SMALL.num_nodes, SMALL.num_events)
    return run_bench(SMALL, repeats=1, micro=False, ds=ds)


def test_rejects_small_or_bad_workloads():
    with pytest.raises(BenchError):
        run_bench(Workload(num_events=MIN_EVENTS - 1))
    with pytest.raises(BenchError):
        run_bench(Workload(num_events=MIN_EVENTS, window=MIN_EVENTS))
    with pytest.raises(BenchError):
        run_bench(SMALL, strategies=("truncation", "random"))


def test_rows_relative_to_truncation(report):
    assert [r["strategy"] for r in report.rows] == ["truncation", "uniform", "nlb", "flash"]
    assert report.rows[0]["rel_pct"] == 100.0
    for r in report.rows:
        assert r["edges_per_sec"] > 0 and r["wall_ms"] > 0
        assert r["rel_pct"] == pytest.approx(100 * r["edges_per_sec"] / report.rows[0]["edges_per_sec"])


def test_jsonl_kinds(report):
    lines = [json.loads(x) for x in report.to_jsonl().splitlines()]
    assert lines[0]["kind"] == "workload" and lines[0]["num_events"] == MIN_EVENTS
    assert [x["kind"] for x in lines[1:]] == ["throughput"] * 4
    assert "truncation" in report.table()


def test_sampling_micro_shape():
    rows = sampling_micro(sizes=(10, 100), k=4, calls=5, repeats=1, flash_max=10)
    got = {(r["strategy"], r["H"]) for r in rows}
    assert got == {("truncation", 10), ("uniform", 10), ("nlb", 10), ("flash", 10),
                   ("truncation", 100), ("uniform", 100), ("nlb", 100)}
    assert all(r["us_per_call"] > 0 for r in rows)


def test_scoring_scaling_rows():
    rows = scoring_scaling((1, 2), candidates=50, queries=4, repeats=1)
    assert [r["threads"] for r in rows] == [1, 2]
    assert all(r["scores_per_sec"] > 0 for r in rows)
