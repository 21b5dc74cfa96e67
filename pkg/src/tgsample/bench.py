"""Throughput benchmarks for the sampling strategies.

Two measurements:

* end-to-end prediction throughput (sampling, aggregation and MERGE) over
  a window of a synthetic stream, per strategy, with identical backbone
  weights, reported as edges/sec and as a percentage of truncation;
* sampling-only cost per call as the history length grows.

Timings are medians over repeated runs after one warm-up run.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .ctdg import HistoryStore, NeighborRecord
from .nn import ParamStore
from .samplers import (STRATEGIES, CandidatePool, FlashDims, GraphFeatures, NlbBuffer, flash_scores_parallel,
                       flash_select, init_flash, nlb_sample, nlb_update, sample_truncation, sample_uniform)
from .synthgen import gen_uci_like
from .trainer import Model, PendingBatch, Stream, TrainConfig, forward_batch

MIN_EVENTS = 10_000
# FLASH is timed up to 1000 records; uniform's O(n) term only starts to show at the largest size
MICRO_SIZES = (10, 100, 1000, 100_000)


class BenchError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    num_nodes: int = 1000
    num_events: int = 100_000
    k: int = 10
    n_pool: int = 32
    window: int = 2000
    seed: int = 0
    backbone: str = "attn_lite"


@dataclass
class BenchReport:
    workload: dict
    threads: int
    rows: list = field(default_factory=list)  # end-to-end per strategy
    micro: list = field(default_factory=list)  # sampling-only per (strategy, |H|)
    scaling: list = field(default_factory=list)  # FLASH scoring throughput per thread count

    def to_jsonl(self) -> str:
        out = [{"kind": "workload", **self.workload, "threads": self.threads}]
        out += [{"kind": "throughput", **r} for r in self.rows]
        out += [{"kind": "sampling", **r} for r in self.micro]
        out += [{"kind": "threads", **r} for r in self.scaling]
        return "\n".join(json.dumps(r, sort_keys=True) for r in out) + "\n"

    def table(self) -> str:
        lines = [f"{'strategy':<12}{'edges/sec':>14}{'median ms':>12}{'vs trunc':>10}"]
        for r in self.rows:
            lines.append(f"{r['strategy']:<12}{r['edges_per_sec']:>14.1f}{r['wall_ms']:>12.1f}"
                         f"{r['rel_pct']:>9.1f}%")
        if self.micro:
            sizes = sorted({m["H"] for m in self.micro})
            lines.append("")
            lines.append(f"{'sampling us/call':<18}" + "".join(f"{'|H|=' + str(h):>12}" for h in sizes))
            for s in dict.fromkeys(m["strategy"] for m in self.micro):
                cells = {m["H"]: m["us_per_call"] for m in self.micro if m["strategy"] == s}
                lines.append(f"{s:<18}" + "".join(f"{cells[h]:>12.1f}" if h in cells else f"{'-':>12}"
                                                  for h in sizes))
        return "\n".join(lines)


def _median_ms(fn, repeats: int = 5) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1000)
    return float(np.median(times))


def end_to_end(ds, wl: Workload, strategy: str, threads: int = 1, repeats: int = 5) -> dict:
    """Median wall time to predict the last ``wl.window`` events of ``ds``."""
    cfg = TrainConfig(strategy=strategy, backbone=wl.backbone, k=wl.k, n_pool=wl.n_pool, seed=wl.seed)
    model = Model(cfg, ds)
    start = len(ds) - wl.window
    base = Stream(ds, wl.k, np.random.default_rng(wl.seed) if strategy == "nlb" else None)
    for i in range(start):
        base.append(i)
    executor = ThreadPoolExecutor(threads) if threads > 1 else None

    def run():
        rng = np.random.default_rng(wl.seed)
        batch = PendingBatch()
        for i in range(start, len(ds)):
            batch.add(base, int(ds.src[i]), int(ds.dst[i]), float(ds.t[i]), 1, model, rng)
        with ad.no_grad():
            forward_batch(model, batch, rng, False, threads, executor)

    try:
        ms = _median_ms(run, repeats)
    finally:
        if executor is not None:
            executor.shutdown()
    return {"strategy": strategy, "wall_ms": ms, "edges_per_sec": wl.window / (ms / 1000)}


def _flash_setup(rng, n_nodes: int, k: int):
    store = ParamStore()
    store.add("emb.M", rng.standard_normal((n_nodes, 16)))
    dims = FlashDims(d_m=16, d_h=64, d_mlp=64)
    init_flash(store, dims, rng)
    return store, GraphFeatures.build(time_scale=1.0)


def sampling_micro(sizes=(10, 100, 1000), k: int = 10, calls: int = 50, seed: int = 0,
                   strategies=STRATEGIES, repeats: int = 5, flash_max: int = 1000) -> list[dict]:
    """Per-call sampling cost for one node whose history holds ``|H|`` records.

    FLASH is skipped for histories longer than ``flash_max``.
    """
    rng = np.random.default_rng(seed)
    out = []
    n_nodes = max(sizes) + 2
    store, feats = _flash_setup(rng, n_nodes, k)
    for h in sizes:
        hist = HistoryStore()
        buf = NlbBuffer(k, np.random.default_rng(seed))
        for i in range(h):
            u = 1 + i % (n_nodes - 1)
            hist.append(0, u, float(i), i)
            nlb_update(buf, 0, NeighborRecord(u, float(i), i))
        t = float(h)
        fns = {
            "truncation": lambda: sample_truncation(hist.view(0, t), k),
            "uniform": lambda: sample_uniform(hist.view(0, t), k, rng),
            "nlb": lambda: nlb_sample(buf, 0, k),
            "flash": lambda: flash_select(hist.view(0, t), 0, 1, t, store, k, rng, feats, n_pool=None),
        }
        for s in strategies:
            if s == "flash" and h > flash_max:
                continue
            fn = fns[s]
            n_calls = calls if s != "flash" else max(5, calls // 10)

            def loop(fn=fn, n_calls=n_calls):
                for _ in range(n_calls):
                    fn()

            out.append({"strategy": s, "H": h, "us_per_call": _median_ms(loop, repeats) * 1000 / n_calls})
    return out


def scoring_scaling(thread_counts=(1, 4), candidates: int = 1000, queries: int = 32, seed: int = 0,
                    repeats: int = 5) -> list[dict]:
    """FLASH scoring throughput (candidates/sec) on ``queries`` x ``candidates`` pools."""
    rng = np.random.default_rng(seed)
    n_nodes = candidates + 2
    store, feats = _flash_setup(rng, n_nodes, 10)
    Q, W = queries, candidates
    t = np.full(Q, float(W))
    tu = np.tile(np.arange(W, dtype=np.float64), (Q, 1))
    pool = CandidatePool(np.zeros(Q, dtype=np.int64), np.ones(Q, dtype=np.int64), t,
                         rng.integers(1, n_nodes, size=(Q, W)), tu, np.full((Q, W), -1), np.ones((Q, W), bool),
                         np.tile(np.arange(W, 0, -1, dtype=np.float64), (Q, 1)))
    out = []
    for n in thread_counts:
        with ThreadPoolExecutor(n) as ex:
            ms = _median_ms(lambda: flash_scores_parallel(store, pool, feats, n, executor=ex), repeats)
        out.append({"threads": n, "wall_ms": ms, "scores_per_sec": Q * W / (ms / 1000)})
    return out


def run_bench(workload: Workload = Workload(), strategies=STRATEGIES, threads: int = 1, micro: bool = True,
              repeats: int = 5, ds=None) -> BenchReport:
    if workload.num_events < MIN_EVENTS:
        raise BenchError(f"workload needs at least {MIN_EVENTS} events for stable timing")
    if not 0 < workload.window < workload.num_events:
        raise BenchError("window must lie inside the stream")
    unknown = set(strategies) - set(STRATEGIES)
    if unknown:
        raise BenchError(f"unknown strategies {sorted(unknown)}")
    if ds is None:
        ds = gen_uci_like(workload.seed, workload.num_nodes, workload.num_events)
    report = BenchReport(asdict(workload), threads)
    strategies = ["truncation"] + [s for s in strategies if s != "truncation"]
    for s in strategies:
        report.rows.append(end_to_end(ds, workload, s, threads, repeats))
    base = report.rows[0]["edges_per_sec"]
    for r in report.rows:
        r["rel_pct"] = 100.0 * r["edges_per_sec"] / base
    if micro:
        report.micro = sampling_micro(MICRO_SIZES, k=workload.k, seed=workload.seed, repeats=repeats)
        counts = sorted({1, threads, min(4, os.cpu_count() or 1)})
        report.scaling = scoring_scaling(counts, seed=workload.seed, repeats=repeats)
    return report
