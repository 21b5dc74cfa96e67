"""Backbones that turn a sampled neighborhood into a node embedding, plus MERGE.

``attn_lite`` is single-head attention from the node to its slots;
``mixer_lite`` is an MLP-mixer over the slots. Both read the shared node
feature table ``emb.M``. With ``use_time=False`` the slots carry no time
information, so the backbone sees only the set of sampled neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import (ParamStore, clamp_prob, init_linear, init_mixer, init_mlp, init_time2vec, mixer_block,
                 mlp_forward, mlp_layers, time2vec)
from .samplers import GraphFeatures, SampledNeighborhood

BACKBONES = ("attn_lite", "mixer_lite")


@dataclass(frozen=True)
class BackboneDims:
    kind: str = "attn_lite"
    num_nodes: int = 1
    d_m: int = 16
    d_e: int = 0
    d_t: int = 8
    d_z: int = 32
    k: int = 10
    use_time: bool = True

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ValueError(f"unknown backbone {self.kind!r}; choose from {BACKBONES}")

    @property
    def d_slot(self) -> int:
        return self.d_m + self.d_e + (self.d_t if self.use_time else 0)


@dataclass
class NeighborBatch:
    """``Q`` target nodes with ``k`` padded slots each (valid slots first)."""

    v: np.ndarray  # [Q]
    t: np.ndarray  # [Q]
    nbr: np.ndarray  # [Q, k]
    tu: np.ndarray  # [Q, k]
    eid: np.ndarray  # [Q, k]
    mask: np.ndarray  # [Q, k]

    @classmethod
    def from_neighborhoods(cls, nodes, times, hoods: list[SampledNeighborhood], k: int) -> "NeighborBatch":
        Q = len(hoods)
        nbr = np.zeros((Q, k), dtype=np.int64)
        tu = np.zeros((Q, k))
        eid = np.full((Q, k), -1, dtype=np.int64)
        mask = np.zeros((Q, k), dtype=bool)
        for q, h in enumerate(hoods):
            for i, r in enumerate(h.records[:k]):
                nbr[q, i], tu[q, i], eid[q, i], mask[q, i] = r.neighbor, r.t, r.edge_feat_ref, True
        return cls(np.asarray(nodes, dtype=np.int64), np.asarray(times, dtype=np.float64), nbr, tu, eid, mask)


def init_backbone(store: ParamStore, dims: BackboneDims, rng, literal_init=False) -> None:
    """Create ``emb.M`` (N(0, 1)) and the backbone's ``bb.*`` parameters."""
    d = dims
    store.add("emb.M", rng.standard_normal((d.num_nodes, d.d_m)))
    if d.use_time:
        init_time2vec(store, "bb.time", d.d_t)
    if d.kind == "attn_lite":
        init_linear(store, "bb.q", d.d_m + (d.d_t if d.use_time else 0), d.d_z, rng, literal_init)
        init_linear(store, "bb.k", d.d_slot, d.d_z, rng, literal_init)
        init_linear(store, "bb.v", d.d_slot, d.d_z, rng, literal_init)
    else:
        init_linear(store, "bb.proj", d.d_slot, d.d_z, rng, literal_init)
        init_mixer(store, "bb.mix", d.k, d.d_z, rng, literal_init=literal_init)
    store.add("bb.default", rng.uniform(-1.0, 1.0, size=d.d_z) / math.sqrt(d.d_z))
    init_linear(store, "bb.out", d.d_z + d.d_m, d.d_z, rng, literal_init)
    init_mlp(store, "bb.merge", [2 * d.d_z, d.d_z, 1], rng, literal_init)


def _slot_inputs(store, dims, nb, feats):
    parts = [ad.take_rows(store["emb.M"], nb.nbr)]
    if dims.d_e:
        parts.append(feats.edge_feat[nb.eid])
    if dims.use_time:
        dt = feats.delta_t(nb.t[:, None] - nb.tu) * nb.mask
        parts.append(time2vec(dt, store["bb.time.w"], store["bb.time.b"]))
    return ad.concat(parts, -1)


def neighborhood_readout(store: ParamStore, dims: BackboneDims, nb: NeighborBatch,
                         feats: GraphFeatures) -> Tensor:
    """Pooled neighborhood vector ``[Q, d_z]``; the learned default if a node has no slots."""
    if nb.nbr.shape[1] != dims.k:
        raise ValueError(f"expected {dims.k} slots, got {nb.nbr.shape[1]}")
    x = _slot_inputs(store, dims, nb, feats)
    mask = nb.mask
    if dims.kind == "attn_lite":
        q_in = ad.take_rows(store["emb.M"], nb.v)
        if dims.use_time:
            q_in = ad.concat([q_in, time2vec(np.zeros(len(nb.v)), store["bb.time.w"], store["bb.time.b"])], -1)
        q = ad.linear(q_in, store["bb.q.W"], store["bb.q.b"])
        K = ad.linear(x, store["bb.k.W"], store["bb.k.b"])
        V = ad.linear(x, store["bb.v.W"], store["bb.v.b"])
        logits = ad.sum(ad.mul(K, ad.reshape(q, (q.shape[0], 1, -1))), axis=-1) / math.sqrt(dims.d_z)
        alpha = ad.masked_softmax(logits, mask)
        pooled = ad.sum(ad.mul(V, ad.reshape(alpha, (*alpha.shape, 1))), axis=1)
    else:
        tok = ad.mul(ad.linear(x, store["bb.proj.W"], store["bb.proj.b"]), mask[..., None])
        mixed = ad.mul(mixer_block(tok, store, "bb.mix"), mask[..., None])
        count = np.maximum(mask.sum(axis=1, keepdims=True), 1)
        pooled = ad.mul(ad.sum(mixed, axis=1), 1.0 / count)
    has = mask.any(axis=1)[:, None]
    return ad.where(has, pooled, ad.reshape(store["bb.default"], (1, -1)))


def aggregate(store: ParamStore, dims: BackboneDims, nb: NeighborBatch, feats: GraphFeatures) -> Tensor:
    """Node embeddings ``z [Q, d_z]`` from the readout and the node's own features."""
    r = neighborhood_readout(store, dims, nb, feats)
    own = ad.take_rows(store["emb.M"], nb.v)
    return ad.linear(ad.concat([r, own], -1), store["bb.out.W"], store["bb.out.b"])


def merge_predict(store: ParamStore, z_i: Tensor, z_j: Tensor) -> Tensor:
    """Link probabilities ``sigmoid(MLP([z_i || z_j]))`` clamped into ``(0, 1)``."""
    logit = mlp_forward(ad.concat([z_i, z_j], -1), mlp_layers(store, "bb.merge"))
    return clamp_prob(ad.sigmoid(ad.reshape(logit, (-1,))))


def predict_pairs(store: ParamStore, dims: BackboneDims, nb: NeighborBatch, feats: GraphFeatures) -> Tensor:
    """Probabilities for pairs laid out as rows ``(2p, 2p+1) = (v_i side, v_j side)``."""
    z = aggregate(store, dims, nb, feats)
    Q = z.shape[0]
    if Q % 2:
        raise ValueError("pair batch needs an even number of rows")
    z2 = ad.reshape(z, (Q // 2, 2, -1))
    return merge_predict(store, z2[:, 0, :], z2[:, 1, :])
