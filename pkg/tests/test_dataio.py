import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from tgsample.ctdg import Event
from tgsample.dataio import (Dataset, DataError, EmptyEvalSet, EmptyFile, MalformedRow, NonFiniteFeature, SplitSpec,
                             UnsplittableStream, chrono_split, inductive_mask, load_csv, load_pairs,
                             negative_sample, negative_sample_batch, read_split_manifest, write_csv, write_pairs,
                             write_split_manifest)
from tgsample.synthgen import gen_thm1, gen_thm2, gen_uci_like


def _ds(n, times=None, **kw):
    t = np.arange(n, dtype=float) if times is None else np.asarray(times, dtype=float)
    src = np.arange(n) % 5
    dst = 5 + np.arange(n) % 7
    return Dataset(src=src, dst=dst, t=t, edge_feat=None, num_nodes=12, **kw)


def test_load_small_file_with_features(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("src,dst,t,f0,f1\n1,2,0.5,0.1,0.2\n2,3,1.5,0.3,0.4\n1,3,1.0,0.5,0.6\n")
    ds = load_csv(p)
    assert len(ds) == 3 and ds.d_e == 2 and ds.num_nodes == 3
    assert ds.t.tolist() == [0.5, 1.0, 1.5]  # sorted by time
    assert ds.edge_feat[1].tolist() == [0.5, 0.6]


def test_load_errors(tmp_path):
    p = tmp_path / "nan.csv"
    p.write_text("src,dst,t,f0\n1,2,0.5,nan\n")
    with pytest.raises(NonFiniteFeature):
        load_csv(p)
    p = tmp_path / "drift.csv"
    p.write_text("src,dst,t,f0\n1,2,0.5,1.0\n1,2,0.7\n")
    with pytest.raises(MalformedRow):
        load_csv(p)
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(EmptyFile):
        load_csv(p)
    p = tmp_path / "header.csv"
    p.write_text("src,dst,t\n")
    with pytest.raises(EmptyFile):
        load_csv(p)


def test_uci_shaped_file_roundtrip(tmp_path):
    ds = gen_uci_like(0)
    p = tmp_path / "uci.csv"
    write_csv(ds, p)
    back = load_csv(p)
    assert back.num_nodes == 1899 and len(back) == 59835
    assert np.array_equal(back.src, ds.src) and np.array_equal(back.t, ds.t)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 9), st.floats(0, 1e6),
                          st.floats(-1e300, 1e300), st.integers(0, 1)), min_size=1, max_size=25))
def test_csv_roundtrip_bit_exact(tmp_path_factory, rows):
    rows = [r for r in rows if r[0] != r[1]]
    if not rows:
        return
    rows.sort(key=lambda r: r[2])
    src, dst, t, f, lab = (np.array(c) for c in zip(*rows))
    used = sorted(set(src.tolist()) | set(dst.tolist()))
    remap = {u: i for i, u in enumerate(used)}
    ds = Dataset(src=[remap[s] for s in src], dst=[remap[d] for d in dst], t=t, edge_feat=f.reshape(-1, 1),
                 num_nodes=len(used), labels=lab)
    p = tmp_path_factory.mktemp("rt") / "d.csv"
    write_csv(ds, p)
    back = load_csv(p)
    assert np.array_equal(back.src, ds.src) and np.array_equal(back.dst, ds.dst)
    assert back.t.tobytes() == ds.t.tobytes()
    assert back.edge_feat.tobytes() == ds.edge_feat.tobytes()
    assert np.array_equal(back.labels, ds.labels)


def test_pairs_roundtrip(tmp_path):
    ds = gen_thm1(2, 20, seed=1)
    write_csv(ds, tmp_path / "a.csv")
    write_pairs(ds, tmp_path / "a.pairs.csv")
    back = load_pairs(load_csv(tmp_path / "a.csv"), tmp_path / "a.pairs.csv")
    assert np.array_equal(back.neg_dst, ds.neg_dst)


def test_split_sizes():
    s = chrono_split(_ds(100))
    assert [len(s[k]) for k in ("train", "val", "test")] == [70, 15, 15]
    s = chrono_split(_ds(10))
    assert [len(s[k]) for k in ("train", "val", "test")] == [7, 1, 2]
    with pytest.raises(UnsplittableStream):
        chrono_split(_ds(10, times=[3.0] * 10))
    with pytest.raises(UnsplittableStream):
        chrono_split(_ds(9))


def test_split_keeps_timestamp_groups_together():
    times = list(range(13)) + [13, 13, 13] + [14, 15, 16, 17]
    s = chrono_split(_ds(20, times=times))
    assert s["train"].stop == 16  # the boundary at 14 moves past the t=13 group


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=40, max_size=120))
def test_split_invariants(gaps):
    t = np.cumsum(gaps).astype(float)
    ds = _ds(len(t), times=t)
    try:
        s = chrono_split(ds)
    except UnsplittableStream:
        return
    tr, va, te = s["train"], s["val"], s["test"]
    assert tr.start == 0 and tr.stop == va.start and va.stop == te.start and te.stop == len(t)
    assert t[tr.stop - 1] <= t[va.start] and t[va.stop - 1] <= t[te.start]
    assert t[tr.stop - 1] < t[va.start]  # no tied group straddles a boundary


def test_split_manifest_roundtrip(tmp_path):
    s = chrono_split(_ds(50))
    write_split_manifest(s, tmp_path / "split.txt")
    assert read_split_manifest(tmp_path / "split.txt") == s
    assert (tmp_path / "split.txt").read_text().splitlines()[0] == "train,0,35"


def test_split_spec_validates():
    with pytest.raises(ValueError):
        SplitSpec(0.5, 0.3, 0.3)


def test_inductive_on_thm2_removing_c():
    ds = gen_thm2(40)
    s = chrono_split(ds)
    m = inductive_mask(ds, s, new_nodes={2})
    tr = s["train"]
    kept = ds.dst[tr.start:tr.stop][m.train_keep]
    assert set(kept.tolist()) == {1}
    for name in ("val", "test"):
        assert np.all(ds.dst[m.eval_index[name]] == 2)


def test_inductive_empty_set_and_properties():
    ds = gen_uci_like(0, num_nodes=150, num_events=2000)
    s = chrono_split(ds)
    m0 = inductive_mask(ds, s, new_nodes=set())
    assert all(v.size == 0 for v in m0.eval_index.values())
    m = inductive_mask(ds, s, frac=0.1, seed=3)
    assert len(m.new_nodes) == 15
    new = np.array(sorted(m.new_nodes))
    tr = s["train"]
    src, dst = ds.src[tr.start:tr.stop][m.train_keep], ds.dst[tr.start:tr.stop][m.train_keep]
    assert not np.isin(src, new).any() and not np.isin(dst, new).any()
    assert inductive_mask(ds, s, frac=0.1, seed=3).new_nodes == m.new_nodes
    with pytest.raises(ValueError):
        inductive_mask(ds, s, frac=0.0)


def test_inductive_empty_eval_raises():
    # every node appears in training, but val/test only involve nodes 0 and 1
    src = list(range(2, 20)) + [0] * 12
    dst = [0] * 18 + [1] * 12
    ds = Dataset(src=src, dst=dst, t=np.arange(30.0), edge_feat=None, num_nodes=20)
    s = chrono_split(ds)
    assert s["val"].start >= 18
    raised = 0
    for seed in range(5):
        try:
            m = inductive_mask(ds, s, frac=0.05, seed=seed)
            assert m.new_nodes <= {0, 1}
        except EmptyEvalSet:
            raised += 1
    assert raised > 0


def test_negative_bipartite_forced():
    ds = Dataset(src=[0, 1], dst=[2, 3], t=[0.0, 1.0], edge_feat=None, num_nodes=4, bipartite=True)
    rng = np.random.default_rng(0)
    for _ in range(20):
        e = negative_sample(Event(0, 2, 5.0), ds, rng)
        assert (e.src, e.dst, e.t) == (0, 3, 5.0)


def test_negative_tiny_universe():
    ds = Dataset(src=[1], dst=[2], t=[0.0], edge_feat=None, num_nodes=3)
    assert negative_sample(Event(1, 2, 1.0), ds, np.random.default_rng(0)).dst == 0
    ds2 = Dataset(src=[0], dst=[1], t=[0.0], edge_feat=None, num_nodes=2, bipartite=True)
    with pytest.raises(DataError):
        negative_sample(Event(0, 1, 1.0), ds2, np.random.default_rng(0))


def test_negative_uniform_chi_square():
    ds = Dataset(src=[0], dst=[1], t=[0.0], edge_feat=None, num_nodes=8)
    rng = np.random.default_rng(42)
    draws = [negative_sample(Event(1, 2, 0.0), ds, rng).dst for _ in range(10_000)]
    allowed = [0, 3, 4, 5, 6, 7]
    assert set(draws) == set(allowed)
    counts = np.array([draws.count(a) for a in allowed])
    assert chisquare(counts).pvalue > 0.01


def test_negative_reproducible_and_batch():
    ds = gen_uci_like(1, num_nodes=100, num_events=1000)
    a = [negative_sample(Event(0, 1, 0.0), ds, np.random.default_rng(9)).dst for _ in range(3)]
    b = [negative_sample(Event(0, 1, 0.0), ds, np.random.default_rng(9)).dst for _ in range(3)]
    assert a == b
    out = negative_sample_batch(ds.src, ds.dst, ds, np.random.default_rng(0))
    assert np.all(out != ds.dst) and np.all(out != ds.src)
