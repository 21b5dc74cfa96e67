"""Deterministic adversarial dynamic graphs with matched negative pairs.

Each generator returns a Dataset whose ``neg_dst`` column pairs every
positive event with the negative the impossibility arguments rely on.
Node ids are dense and appear in first-use order, so writing the stream to
CSV and reading it back is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset

KINDS = ("thm1_cycle", "thm2_alternating", "lemma1_bipartite", "uci_like")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str
    k: int = 2
    horizon: int = 1000
    seed: int = 0
    n_trunc: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown synthetic kind {self.kind!r}; choose from {KINDS}")
        if self.kind != "uci_like" and self.horizon < 4:
            raise ValueError("horizon must be at least 4")
        if self.k < 1 or self.n_trunc < 1:
            raise ValueError("k and N must be positive")

    @classmethod
    def parse(cls, text: str) -> "SyntheticSpec":
        """Parse ``kind[:key=value,...]``, e.g. ``thm1:k=2,horizon=4000,seed=1``."""
        kind, _, rest = text.partition(":")
        kind = {"thm1": "thm1_cycle", "thm2": "thm2_alternating", "lemma1": "lemma1_bipartite",
                "uci": "uci_like"}.get(kind.strip(), kind.strip())
        kw = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, _, val = item.partition("=")
            key = {"n": "n_trunc", "N": "n_trunc"}.get(key.strip(), key.strip())
            if key not in ("k", "horizon", "seed", "n_trunc"):
                raise ValueError(f"unknown synthetic option {key!r}")
            kw[key] = int(val)
        return cls(kind, **kw)


def _dataset(rows, num_nodes, name, bipartite=False) -> Dataset:
    src, dst, t, neg = (np.array(c) for c in zip(*rows))
    return Dataset(src=src, dst=dst, t=t.astype(np.float64), edge_feat=None, num_nodes=num_nodes,
                   name=name, bipartite=bipartite, neg_dst=neg.astype(np.int64))


def gen_thm1(k: int, horizon: int, seed: int = 0) -> Dataset:
    """Node ``v=0`` meets all of ``A`` when ``t % 4 in {1, 2}`` and all of ``B`` otherwise.

    ``A = 1..k`` and ``B = k+1..2k``. Each positive ``(v, a, t)`` is paired
    with a seeded draw from the opposite set.
    """
    if k < 1 or horizon < 8:
        raise ValueError("gen_thm1 needs k >= 1 and horizon >= 8")
    rng = np.random.default_rng(seed)
    A = list(range(1, k + 1))
    B = list(range(k + 1, 2 * k + 1))
    rows = []
    for t in range(1, horizon + 1):
        group, other = (A, B) if t % 4 in (1, 2) else (B, A)
        for u in group:
            rows.append((0, u, t, other[rng.integers(k)]))
    return _dataset(rows, 2 * k + 1, f"thm1_k{k}_T{horizon}")


def gen_thm2(horizon: int, seed: int = 0) -> Dataset:
    """``a=0`` meets ``b=1`` at odd ``t`` and ``c=2`` at even ``t``; negatives swap b and c."""
    if horizon < 4:
        raise ValueError("gen_thm2 needs horizon >= 4")
    rows = [(0, 1, t, 2) if t % 2 else (0, 2, t, 1) for t in range(1, horizon + 1)]
    return _dataset(rows, 3, f"thm2_T{horizon}")


def gen_lemma1(n: int, horizon: int, seed: int = 0) -> Dataset:
    """``v1=0`` meets ``v2=1`` or ``v3=2``, one interaction per tick.

    The destination is the one *not* chosen the previous time ``v1``'s
    ``n`` most recent destinations (as an ordered tuple) looked the same.
    An unseen tuple alternates away from the latest destination, starting
    with ``v2``.
    """
    if n < 1 or horizon < 4:
        raise ValueError("gen_lemma1 needs N >= 1 and horizon >= 4")
    last_choice: dict[tuple, int] = {}
    history: list[int] = []
    rows = []
    for t in range(1, horizon + 1):
        key = tuple(history[-n:])
        if key in last_choice:
            d = 3 - last_choice[key]
        else:
            d = 1 if not history or history[-1] == 2 else 2
        last_choice[key] = d
        history.append(d)
        rows.append((0, d, t, 3 - d))
    return _dataset(rows, 3, f"lemma1_N{n}_T{horizon}", bipartite=True)


def gen_uci_like(seed: int = 0, num_nodes: int = 1899, num_events: int = 59835,
                 duration: float = 196 * 86400.0) -> Dataset:
    """A messaging stream with the UCI network's size and recency-driven dynamics.

    Senders are drawn by heavy-tailed activity with bursty persistence;
    most messages go to one of the sender's recent contacts (geometrically
    favouring the latest), the rest to a popularity-weighted new contact.
    Every node appears at least once. Timestamps are whole seconds.
    """
    rng = np.random.default_rng(seed)
    activity = rng.pareto(1.5, size=num_nodes) + 0.05
    popularity = rng.pareto(1.5, size=num_nodes) + 0.05
    c_act = np.cumsum(activity)
    c_pop = np.cumsum(popularity)
    newcomers = list(rng.permutation(num_nodes))
    seen = np.zeros(num_nodes, dtype=bool)
    contacts: list[list[int]] = [[] for _ in range(num_nodes)]
    gaps = rng.exponential(1.0, size=num_events)
    times = np.floor(np.cumsum(gaps) / gaps.sum() * duration)
    src_out = np.empty(num_events, dtype=np.int64)
    dst_out = np.empty(num_events, dtype=np.int64)
    recent_src: list[int] = []
    for i in range(num_events):
        r = rng.random()
        if newcomers and r < 0.12:
            s = newcomers.pop()
        elif recent_src and r < 0.55:
            s = recent_src[-1 - min(int(rng.geometric(0.35)) - 1, len(recent_src) - 1)]
        else:
            s = int(np.searchsorted(c_act, rng.random() * c_act[-1], side="right"))
        c = contacts[s]
        if c and rng.random() < 0.7:
            d = c[-1 - min(int(rng.geometric(0.45)) - 1, len(c) - 1)]
        elif newcomers and rng.random() < 0.3:
            d = newcomers.pop()
        else:
            d = int(np.searchsorted(c_pop, rng.random() * c_pop[-1], side="right"))
        if d == s:
            d = (s + 1 + int(rng.integers(num_nodes - 1))) % num_nodes
        for a, b in ((s, d), (d, s)):
            lst = contacts[a]
            if b in lst:
                lst.remove(b)
            lst.append(b)
            if len(lst) > 8:
                del lst[0]
        seen[s] = seen[d] = True
        src_out[i], dst_out[i] = s, d
        recent_src.append(d)  # replies keep conversations going
        if len(recent_src) > 50:
            del recent_src[0]
    if not seen.all():
        raise RuntimeError("generator left nodes without events; raise num_events")
    return Dataset(src=src_out, dst=dst_out, t=times, edge_feat=None, num_nodes=num_nodes,
                   name="uci_like")


def generate(spec: SyntheticSpec) -> Dataset:
    if spec.kind == "thm1_cycle":
        return gen_thm1(spec.k, spec.horizon, spec.seed)
    if spec.kind == "thm2_alternating":
        return gen_thm2(spec.horizon, spec.seed)
    if spec.kind == "lemma1_bipartite":
        return gen_lemma1(spec.n_trunc, spec.horizon, spec.seed)
    return gen_uci_like(spec.seed)
