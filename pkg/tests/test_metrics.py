import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tgsample.metrics import MetricError, accuracy_at_threshold, average_precision, mrr, roc_auc, summarize


# O(n^2) references written straight from the definitions. A tied item
# counts as half above and half below (mid-rank).

def ap_oracle(s, y):
    s, y = np.asarray(s, float), np.asarray(y, int)
    precs = []
    for i in np.flatnonzero(y == 1):
        above = [j for j in range(len(s)) if s[j] > s[i]]
        tied = [j for j in range(len(s)) if s[j] == s[i] and j != i]
        num = sum(y[j] for j in above) + 1 + sum(y[j] for j in tied) / 2
        den = len(above) + 1 + len(tied) / 2
        precs.append(num / den)
    return float(np.mean(precs))


def auc_oracle(s, y):
    pos = [a for a, b in zip(s, y) if b == 1]
    neg = [a for a, b in zip(s, y) if b == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def mrr_oracle(queries):
    out = []
    for s, y in queries:
        p = s[list(y).index(1)]
        rank = 1 + sum(1 for a, b in zip(s, y) if b == 0 and a > p) + 0.5 * sum(
            1 for a, b in zip(s, y) if b == 0 and a == p)
        out.append(1 / rank)
    return float(np.mean(out))


def acc_oracle(s, y, th=0.5):
    return sum(int((a >= th) == bool(b)) for a, b in zip(s, y)) / len(s)


def _case(rng):
    n = int(rng.integers(2, 40))
    # coarse grid so ties are common
    s = rng.integers(0, 6, size=n) / 5.0 if rng.random() < 0.6 else rng.random(n)
    y = rng.integers(0, 2, size=n)
    y[0], y[1] = 1, 0
    return s, y


def test_hand_examples():
    assert average_precision([0.9, 0.1], [1, 0]) == 1.0
    assert average_precision([0.9, 0.1], [0, 1]) == 0.5
    assert roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert roc_auc([0.3] * 4, [1, 0, 1, 0]) == 0.5
    assert mrr([([0.9, 0.1, 0.2], [1, 0, 0])] * 3) == 1.0
    assert mrr([([0.1, 0.9], [1, 0])]) == 0.5
    assert accuracy_at_threshold([1, 0, 1], [1, 0, 1]) == 1.0
    assert accuracy_at_threshold([0.5] * 4, [1, 0, 1, 0]) == 0.5


def test_against_oracles_200_cases():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s, y = _case(rng)
        assert abs(average_precision(s, y) - ap_oracle(s, y)) <= 1e-12
        assert abs(roc_auc(s, y) - auc_oracle(s, y)) <= 1e-12
        assert abs(accuracy_at_threshold(s, y) - acc_oracle(s, y)) <= 1e-12


def test_mrr_against_oracle():
    rng = np.random.default_rng(1)
    queries = []
    for _ in range(100):
        n = int(rng.integers(2, 12))
        s = rng.integers(0, 4, size=n) / 3.0
        y = np.zeros(n, int)
        y[rng.integers(n)] = 1
        queries.append((s, y))
    assert abs(mrr(queries) - mrr_oracle(queries)) <= 1e-12


def test_ap_without_ties_is_textbook():
    # for distinct scores: mean of precision@rank over positives
    rng = np.random.default_rng(2)
    for _ in range(50):
        s = rng.permutation(20).astype(float)
        y = rng.integers(0, 2, 20)
        y[0] = 1
        order = np.argsort(-s)
        hits = np.cumsum(y[order])
        ref = np.mean([hits[r] / (r + 1) for r in range(20) if y[order][r]])
        assert average_precision(s, y) == pytest.approx(ref, abs=1e-12)


def test_ap_tie_examples_by_hand():
    # lone positive tied with two negatives sits at mid-rank 2: precision 1/2
    assert average_precision([0.5, 0.5, 0.5], [1, 0, 0]) == pytest.approx(0.5, abs=1e-15)
    # second positive: 1 positive above, one tied negative -> (1+1)/(1+1+0.5)
    assert average_precision([0.9, 0.5, 0.5], [1, 1, 0]) == pytest.approx((1 + 0.8) / 2, abs=1e-15)
    assert roc_auc([0.9, 0.5, 0.5], [1, 1, 0]) == pytest.approx(0.75, abs=1e-15)


def test_errors():
    with pytest.raises(MetricError):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(MetricError):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        roc_auc([0.1], [1, 0])
    with pytest.raises(MetricError):
        mrr([([0.1, 0.2], [1, 1])])
    with pytest.raises(MetricError):
        accuracy_at_threshold([0.1], [3])


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 1)), min_size=2, max_size=40))
def test_monotone_transform_invariance(rows):
    s, y = map(np.array, zip(*rows))
    if y.sum() in (0, len(y)):
        return
    s = s.astype(float)
    t = s ** 3 + 2 * s + 7  # strictly increasing and exact on small integers
    assert average_precision(s, y) == pytest.approx(average_precision(t, y), abs=1e-12)
    assert roc_auc(s, y) == pytest.approx(roc_auc(t, y), abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=2, max_size=40, unique=True), st.data())
def test_auc_negation_complements(vals, data):
    y = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(vals), max_size=len(vals))))
    if y.sum() in (0, len(y)):
        return
    s = np.array(vals, float)
    assert roc_auc(s, y) + roc_auc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_summarize_keys():
    assert set(summarize([0.9, 0.1], [1, 0])) == {"ap", "auc", "acc"}
