"""Historical-neighbor selection: truncation, uniform, NLB buffer and FLASH.

The FLASH scorer rates every candidate neighbor ``u`` of ``v_i`` for the
link ``(v_i, v_j)`` at time ``t`` and keeps the ``k`` best. Scores come from
two MLP-mixers, one over the neighbor's own spatial and temporal tokens and
one over the neighbor and both link endpoints, followed by an MLP.
"""

from __future__ import annotations

import heapq
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .ctdg import NeighborRecord
from .nn import (ParamStore, init_linear, init_mixer, init_mlp, init_time2vec, mixer_forward,
                 mlp_forward, mlp_layers, time2vec)

STRATEGIES = ("truncation", "uniform", "nlb", "flash")


@dataclass
class SampledNeighborhood:
    """``k`` slots, valid ones first in ascending time order, padding after."""

    slots: list
    valid_mask: np.ndarray
    scores: np.ndarray
    strategy: str

    @property
    def records(self) -> list[NeighborRecord]:
        return [s for s, ok in zip(self.slots, self.valid_mask) if ok]

    def __len__(self):
        return len(self.slots)


def _neighborhood(records, k, strategy, scores=None) -> SampledNeighborhood:
    m = len(records)
    slots = list(records) + [None] * (k - m)
    mask = np.zeros(k, dtype=bool)
    mask[:m] = True
    sc = np.zeros(k)
    if scores is not None:
        sc[:m] = scores
    return SampledNeighborhood(slots, mask, sc, strategy)


def sample_truncation(H: Sequence, k: int) -> SampledNeighborhood:
    """The ``min(k, |H|)`` most recent records."""
    recs = H[max(0, len(H) - k):] if k > 0 else []
    return _neighborhood(recs, max(k, 0), "truncation")


def uniform_indices(n: int, k: int, rng) -> np.ndarray:
    """Sorted indices of a uniform size-``min(k, n)`` subset (partial Fisher-Yates)."""
    m = max(min(k, n), 0)
    idx = np.arange(n)
    if m == 0:
        return idx[:0]
    js = rng.integers(np.arange(m), n)  # swap targets, j_i uniform on [i, n)
    for i, j in enumerate(js.tolist()):
        idx[i], idx[j] = idx[j], idx[i]
    return np.sort(idx[:m])


def sample_uniform(H: Sequence, k: int, rng) -> SampledNeighborhood:
    idx = uniform_indices(len(H), k, rng)
    return _neighborhood([H[i] for i in idx], max(k, 0), "uniform")


class NlbBuffer:
    """Fixed ``k``-slot buffer per node with O(1) maintenance.

    Until a node has seen ``k`` interactions its buffer fills in order.
    Afterwards the ``n``-th interaction overwrites a uniformly random slot
    with probability ``k/n`` (reservoir rule), so every past record is held
    with probability ``k/n``. This approximates No-Look-Back sampling; it is
    not its hashing scheme.
    """

    def __init__(self, k: int, rng):
        self.k = k
        self.rng = rng
        self.slots: dict[int, list] = {}
        self.count: dict[int, int] = {}

    def occupancy(self, v: int) -> int:
        return len(self.slots.get(v, ()))


def nlb_update(buf: NlbBuffer, v: int, record: NeighborRecord) -> None:
    if buf.k <= 0:
        return
    slots = buf.slots.setdefault(v, [])
    buf.count[v] = buf.count.get(v, 0) + 1
    if len(slots) < buf.k:
        slots.append(record)
    else:
        j = int(buf.rng.integers(buf.count[v]))
        if j < buf.k:
            slots[j] = record


def nlb_sample(buf: NlbBuffer, v: int, k: int | None = None, t: float | None = None) -> SampledNeighborhood:
    """Current buffer contents of ``v`` (only records before ``t`` if given)."""
    k = buf.k if k is None else k
    recs = buf.slots.get(v, [])
    if t is not None:
        recs = [r for r in recs if r.t < t]
    recs = sorted(recs, key=lambda r: r.t)[:k]
    return _neighborhood(recs, k, "nlb")


# ---------------------------------------------------------------- FLASH scorer


@dataclass(frozen=True)
class FlashDims:
    d_m: int = 16
    d_e: int = 0
    d_v: int = 0
    d_t: int = 8
    d_h: int = 64
    d_mlp: int = 64


@dataclass
class GraphFeatures:
    """Static inputs shared by the scorer and the backbones."""

    edge_feat: np.ndarray  # [E + 1, d_e]; the last row is zeros for "no edge"
    node_feat: np.ndarray | None = None  # [num_nodes, d_v]
    time_scale: float = 1.0

    @classmethod
    def build(cls, edge_feat=None, node_feat=None, time_scale=1.0, d_e=0):
        if edge_feat is None:
            edge_feat = np.zeros((0, d_e))
        ef = np.asarray(edge_feat, dtype=np.float64)
        ef = np.vstack([ef, np.zeros((1, ef.shape[1]))])
        return cls(ef, node_feat, float(time_scale))

    @property
    def d_e(self) -> int:
        return self.edge_feat.shape[1]

    @property
    def d_v(self) -> int:
        return 0 if self.node_feat is None else self.node_feat.shape[1]

    def delta_t(self, dt):
        """Elapsed-time input fed to time encoders: ``log1p(dt / time_scale)``."""
        return np.log1p(np.maximum(np.asarray(dt, dtype=np.float64), 0.0) / self.time_scale)


def init_flash(store: ParamStore, dims: FlashDims, rng, prefix: str = "flash", literal_init=False) -> None:
    """Create the scorer's parameters; ``emb.M`` must already exist (shared)."""
    if "emb.M" not in store:
        raise KeyError("node feature table emb.M must be created first")
    d = dims
    init_time2vec(store, f"{prefix}.phi1", d.d_t)
    init_time2vec(store, f"{prefix}.phi2", d.d_t)
    init_linear(store, f"{prefix}.proj_u", d.d_v + d.d_e + d.d_m, d.d_h, rng, literal_init)
    init_linear(store, f"{prefix}.proj_i", 2 * d.d_v + d.d_m, d.d_h, rng, literal_init)
    init_linear(store, f"{prefix}.proj_j", 2 * d.d_v + d.d_m, d.d_h, rng, literal_init)
    init_linear(store, f"{prefix}.proj_t", 2 * d.d_t, d.d_h, rng, literal_init)
    init_mixer(store, f"{prefix}.mix_self", 2, d.d_h, rng, literal_init=literal_init)
    init_mixer(store, f"{prefix}.mix_link", 3, d.d_h, rng, literal_init=literal_init)
    init_mlp(store, f"{prefix}.out", [2 * d.d_h, d.d_mlp, 1], rng, literal_init)


@dataclass
class CandidatePool:
    """Padded candidate neighbors for ``Q`` queries ``(v_i, v_j, t)``."""

    vi: np.ndarray  # [Q]
    vj: np.ndarray  # [Q]
    t: np.ndarray  # [Q]
    nbr: np.ndarray  # [Q, W]
    tu: np.ndarray  # [Q, W]
    eid: np.ndarray  # [Q, W]
    mask: np.ndarray  # [Q, W] bool
    rank: np.ndarray = field(default=None)  # [Q, W], 1 = most recent in the full history

    @property
    def width(self) -> int:
        return self.nbr.shape[1]


def flash_scores(store: ParamStore, pool: CandidatePool, feats: GraphFeatures,
                 prefix: str = "flash") -> Tensor:
    """Scores ``[Q, W]`` for every candidate; padded entries are 0."""
    Q, W = pool.nbr.shape
    rows = np.flatnonzero(pool.mask.reshape(-1))
    qi = rows // W
    if rows.size == 0:
        return ad.Tensor(np.zeros((Q, W)))
    M = store["emb.M"]
    nbr = pool.nbr.reshape(-1)[rows]
    tu = pool.tu.reshape(-1)[rows]
    eid = pool.eid.reshape(-1)[rows]
    rank = pool.rank.reshape(-1)[rows].astype(np.float64)
    t = pool.t[qi]
    if np.any(tu >= t):
        raise ValueError("candidate neighbor does not precede the query time")

    parts_u = []
    if feats.d_v:
        parts_u.append(feats.node_feat[nbr])
    if feats.d_e:
        parts_u.append(feats.edge_feat[eid])
    parts_u.append(ad.take_rows(M, nbr))
    h_u = ad.linear(ad.concat(parts_u, -1), store[f"{prefix}.proj_u.W"], store[f"{prefix}.proj_u.b"])

    def endpoint(nodes, name):
        # node features are static, so F_V(v, t_u) == F_V(v, t)
        parts = [feats.node_feat[nodes], feats.node_feat[nodes]] if feats.d_v else []
        parts.append(ad.take_rows(M, nodes))
        h = ad.linear(ad.concat(parts, -1), store[f"{name}.W"], store[f"{name}.b"])
        return ad.take_rows(h, qi)

    h_i = endpoint(pool.vi, f"{prefix}.proj_i")
    h_j = endpoint(pool.vj, f"{prefix}.proj_j")
    phi1 = time2vec(feats.delta_t(t - tu), store[f"{prefix}.phi1.w"], store[f"{prefix}.phi1.b"])
    phi2 = time2vec(rank, store[f"{prefix}.phi2.w"], store[f"{prefix}.phi2.b"])
    h_t = ad.linear(ad.concat([phi1, phi2], -1), store[f"{prefix}.proj_t.W"], store[f"{prefix}.proj_t.b"])

    self_tok = ad.stack([h_u, h_t], axis=1)
    link_tok = ad.stack([h_u, h_i, h_j], axis=1)
    mixed = ad.concat([mixer_forward(self_tok, store, f"{prefix}.mix_self"),
                       mixer_forward(link_tok, store, f"{prefix}.mix_link")], -1)
    s = mlp_forward(mixed, mlp_layers(store, f"{prefix}.out"))
    full = ad.scatter_rows(ad.reshape(s, (-1,)), rows, Q * W)
    return ad.reshape(full, (Q, W))


def select_top_k(scores, k: int, rng, valid=None) -> np.ndarray:
    """Indices of the ``k`` largest scores, ties broken uniformly at random.

    Candidates are visited in a seeded random order and ``heapq.nlargest``
    keeps the first of equal scores, so all-equal scores give a uniform
    subset. Returned indices are sorted ascending. Cost O(n log k).
    """
    scores = np.asarray(scores, dtype=np.float64)
    cand = np.arange(scores.size) if valid is None else np.flatnonzero(valid)
    if k <= 0 or cand.size == 0:
        return np.zeros(0, dtype=np.int64)
    order = cand[rng.permutation(cand.size)]
    best = heapq.nlargest(min(k, cand.size), order.tolist(), key=scores.__getitem__)
    return np.sort(np.asarray(best, dtype=np.int64))


def select_top_k_batch(scores: np.ndarray, mask: np.ndarray, k: int, rng) -> np.ndarray:
    """Row-wise ``select_top_k``; returns a bool selection mask ``[Q, W]``."""
    sel = np.zeros(mask.shape, dtype=bool)
    for q in range(mask.shape[0]):
        sel[q, select_top_k(scores[q], k, rng, mask[q])] = True
    return sel


def uniform_select_batch(mask: np.ndarray, k: int, rng) -> np.ndarray:
    """Row-wise uniform size-``min(k, valid)`` subset of the valid entries."""
    sel = np.zeros(mask.shape, dtype=bool)
    for q in range(mask.shape[0]):
        valid = np.flatnonzero(mask[q])
        sel[q, valid[uniform_indices(valid.size, k, rng)]] = True
    return sel


def pool_from_history(H: Sequence, vi: int, vj: int, t: float, n_pool: int | None = None) -> CandidatePool:
    """Single-query pool of the ``n_pool`` most recent records (all if None)."""
    n = len(H)
    start = 0 if n_pool is None else max(0, n - n_pool)
    recs = H[start:n]
    W = max(len(recs), 1)
    nbr = np.zeros((1, W), dtype=np.int64)
    tu = np.zeros((1, W))
    eid = np.full((1, W), -1, dtype=np.int64)
    mask = np.zeros((1, W), dtype=bool)
    rank = np.zeros((1, W))
    for i, r in enumerate(recs):
        nbr[0, i], tu[0, i], eid[0, i], mask[0, i] = r.neighbor, r.t, r.edge_feat_ref, True
        rank[0, i] = n - (start + i)
    return CandidatePool(np.array([vi]), np.array([vj]), np.array([float(t)]), nbr, tu, eid, mask, rank)


def flash_score(u_index: int, H: Sequence, vi: int, vj: int, t: float, store: ParamStore,
                feats: GraphFeatures, prefix: str = "flash") -> float:
    """Score of ``H[u_index]`` for the link ``(vi, vj)`` at ``t``."""
    n = len(H)
    if not 0 <= u_index < n:
        raise IndexError(u_index)
    r = H[u_index]
    pool = CandidatePool(np.array([vi]), np.array([vj]), np.array([float(t)]),
                         np.array([[r.neighbor]]), np.array([[r.t]]), np.array([[r.edge_feat_ref]]),
                         np.array([[True]]), np.array([[n - u_index]], dtype=np.float64))
    with ad.no_grad():
        return float(flash_scores(store, pool, feats, prefix).data[0, 0])


def flash_select(H: Sequence, vi: int, vj: int, t: float, store: ParamStore, k: int, rng,
                 feats: GraphFeatures, n_pool: int | None = None, prefix: str = "flash") -> SampledNeighborhood:
    """Top-``k`` candidates of ``H`` (restricted to the ``n_pool`` most recent)."""
    pool = pool_from_history(H, vi, vj, t, n_pool)
    with ad.no_grad():
        s = flash_scores(store, pool, feats, prefix).data[0]
    idx = select_top_k(s, k, rng, pool.mask[0])
    start = len(H) - int(pool.mask.sum())
    return _neighborhood([H[start + i] for i in idx], max(k, 0), "flash", s[idx])


def construct_truncation_weights(store: ParamStore, dims: FlashDims, prefix: str = "flash") -> ParamStore:
    """Set scorer weights so that ``SCORE(u) == -rank(u)`` exactly.

    Everything is zeroed except the linear channel of the rank encoder,
    an identity path from it through the self-mixer's residuals, and a
    final ``x -> -x`` readout through the ReLU hidden layer.
    """
    out_layers = mlp_layers(store, f"{prefix}.out")
    if dims.d_h < 1 or dims.d_t < 2 or not out_layers:
        raise ValueError("scorer too small to carry the rank channel")
    for name in store.names(prefix + "."):
        store.set(name, np.zeros_like(store[name].data))
    w = store[f"{prefix}.phi2.w"].data.copy()
    w[0] = 1.0
    store.set(f"{prefix}.phi2.w", w)
    P = store[f"{prefix}.proj_t.W"].data.copy()
    P[dims.d_t, 0] = 1.0  # phi2's linear channel -> hidden channel 0
    store.set(f"{prefix}.proj_t.W", P)
    # self-mixer mean-pools two tokens, so channel 0 carries rank / 2
    for i, (W_, _) in enumerate(out_layers):
        W = W_.data.copy()
        if len(out_layers) == 1:
            W[0, 0] = -2.0
        elif i == 0:
            W[0, 0] = 2.0
        elif i == len(out_layers) - 1:
            W[0, 0] = -1.0
        else:
            W[0, 0] = 1.0
        store.set(f"{prefix}.out.{i}.W", W)
    return store


def construct_uniform_weights(store: ParamStore, dims: FlashDims | None = None, prefix: str = "flash") -> ParamStore:
    """Zero the final scorer layer so every candidate scores 0."""
    last = len(mlp_layers(store, f"{prefix}.out")) - 1
    for part in ("W", "b"):
        name = f"{prefix}.out.{last}.{part}"
        store.set(name, np.zeros_like(store[name].data))
    return store


def _sub_pool(pool: CandidatePool, rows: slice) -> CandidatePool:
    return CandidatePool(pool.vi[rows], pool.vj[rows], pool.t[rows], pool.nbr[rows], pool.tu[rows],
                         pool.eid[rows], pool.mask[rows], pool.rank[rows])


def flash_scores_parallel(store: ParamStore, pool: CandidatePool, feats: GraphFeatures, threads: int = 1,
                          prefix: str = "flash", executor=None) -> np.ndarray:
    """Inference-only scores ``[Q, W]``, with query chunks scored on ``threads`` threads.

    Scores of different queries are independent, so chunking changes
    nothing but wall time. Parameters are only read.
    """
    Q = pool.nbr.shape[0]
    if threads <= 1 or Q < 2:
        with ad.no_grad():
            return flash_scores(store, pool, feats, prefix).data
    bounds = np.linspace(0, Q, min(threads, Q) + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def run(sl):
        with ad.no_grad():
            return flash_scores(store, _sub_pool(pool, sl), feats, prefix).data

    if executor is None:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = list(executor.map(run, chunks))
    return np.concatenate(parts, axis=0)
