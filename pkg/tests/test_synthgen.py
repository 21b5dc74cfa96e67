from collections import Counter, defaultdict

import numpy as np
import pytest

from tgsample.ctdg import HistoryStore
from tgsample.samplers import sample_truncation
from tgsample.synthgen import SyntheticSpec, gen_lemma1, gen_thm1, gen_thm2, gen_uci_like, generate


def _events_at(ds, t):
    sel = ds.t == t
    return set(zip(ds.src[sel].tolist(), ds.dst[sel].tolist()))


def test_thm1_groups_follow_the_clock():
    ds = gen_thm1(2, 40)
    # v=0, A={1,2}, B={3,4}
    assert _events_at(ds, 1) == {(0, 1), (0, 2)}
    assert _events_at(ds, 2) == {(0, 1), (0, 2)}
    assert _events_at(ds, 3) == {(0, 3), (0, 4)}
    assert _events_at(ds, 4) == {(0, 3), (0, 4)}
    assert len(ds) == 2 * 40


def test_thm1_negatives_come_from_the_other_group():
    ds = gen_thm1(3, 200, seed=5)
    A, B = {1, 2, 3}, {4, 5, 6}
    for d, n in zip(ds.dst, ds.neg_dst):
        assert (d in A and n in B) or (d in B and n in A)
    assert np.array_equal(ds.neg_dst, gen_thm1(3, 200, seed=5).neg_dst)
    assert not np.array_equal(ds.neg_dst, gen_thm1(3, 200, seed=6).neg_dst)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_thm1_truncated_neighborhoods_coincide(k):
    ds = gen_thm1(k, 64)
    s = HistoryStore()
    for i in range(len(ds)):
        s.append(int(ds.src[i]), int(ds.dst[i]), float(ds.t[i]), i)
    by_phase = defaultdict(set)
    for t in range(9, 64):
        nb = frozenset(r.neighbor for r in sample_truncation(s.view(0, float(t)), k).records)
        phase = "23" if t % 4 in (2, 3) else "01"
        by_phase[phase].add(nb)
    assert len(by_phase["23"]) == 1
    assert len(by_phase["01"]) == 1


def test_thm1_rejects_bad_args():
    with pytest.raises(ValueError):
        gen_thm1(0, 100)
    with pytest.raises(ValueError):
        gen_thm1(2, 4)


def test_thm2_alternates():
    ds = gen_thm2(10)
    assert list(zip(ds.src[:2], ds.dst[:2], ds.t[:2])) == [(0, 1, 1.0), (0, 2, 2.0)]
    assert len(ds) == 10
    assert Counter(ds.dst.tolist()) == {1: 5, 2: 5}
    assert all(n == 3 - d for d, n in zip(ds.dst, ds.neg_dst))


def test_thm2_b_only_meets_a():
    ds = gen_thm2(200)
    s = HistoryStore()
    for i in range(len(ds)):
        s.append(int(ds.src[i]), int(ds.dst[i]), float(ds.t[i]))
    assert {r.neighbor for r in s.view(1, 100.0)} == {0}


@pytest.mark.parametrize("horizon", [4, 9, 101, 1000])
def test_thm2_fraction_of_c(horizon):
    ds = gen_thm2(horizon)
    frac = float(np.mean(ds.dst == 2))
    assert abs(frac - 0.5) <= 1.0 / horizon


def test_lemma1_cold_start():
    ds = gen_lemma1(2, 20)
    assert ds.dst[:2].tolist() == [1, 2]


def _lemma1_keys(ds, n):
    hist, pairs = [], []
    for d in ds.dst.tolist():
        pairs.append((tuple(hist[-n:]), d))
        hist.append(d)
    return pairs


def test_lemma1_same_history_different_destination():
    ds = gen_lemma1(2, 200)
    seen = defaultdict(list)
    for key, d in _lemma1_keys(ds, 2):
        seen[key].append(d)
    # identical size-2 truncated histories are followed by both destinations
    full_keys = [k for k in seen if len(k) == 2]
    assert full_keys and all(set(seen[k]) == {1, 2} for k in full_keys)
    # consecutive visits to a key alternate
    for k in full_keys:
        assert all(a != b for a, b in zip(seen[k], seen[k][1:]))


def test_lemma1_keys_balanced():
    ds = gen_lemma1(2, 4000)
    counts = defaultdict(Counter)
    for key, d in _lemma1_keys(ds, 2):
        counts[key][d] += 1
    for key, c in counts.items():
        assert abs(c[1] - c[2]) <= 1, key


def test_generators_deterministic():
    for spec in ("thm1:k=2,horizon=50,seed=3", "thm2:horizon=30", "lemma1:N=3,horizon=40"):
        a, b = generate(SyntheticSpec.parse(spec)), generate(SyntheticSpec.parse(spec))
        assert np.array_equal(a.dst, b.dst) and np.array_equal(a.neg_dst, b.neg_dst)


def test_spec_parse_and_validation():
    spec = SyntheticSpec.parse("thm1:k=3,horizon=100,seed=7")
    assert (spec.kind, spec.k, spec.horizon, spec.seed) == ("thm1_cycle", 3, 100, 7)
    assert SyntheticSpec.parse("lemma1:N=4").n_trunc == 4
    with pytest.raises(ValueError):
        SyntheticSpec.parse("nope:k=1")
    with pytest.raises(ValueError):
        SyntheticSpec.parse("thm2:horizon=2")
    with pytest.raises(ValueError):
        SyntheticSpec.parse("thm1:width=2")


def test_uci_like_shape():
    ds = gen_uci_like(0, num_nodes=200, num_events=3000)
    assert len(ds) == 3000 and ds.num_nodes == 200
    assert np.all(np.diff(ds.t) >= 0)
    assert np.all(ds.src != ds.dst)
    assert set(ds.src.tolist()) | set(ds.dst.tolist()) == set(range(200))
