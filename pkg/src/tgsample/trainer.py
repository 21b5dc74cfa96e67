"""Training and evaluation over a chronological event stream.

Each mini-batch predicts its positives and one negative per positive,
then the model takes one Adam step on

    L = BCE(p_flash) + lambda_rank * sum of pairwise ranking losses.

Histories are strictly-before-``t`` views of a store that is filled as the
stream is walked, so a prediction never sees its own event.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import BACKBONES, BackboneDims, NeighborBatch, init_backbone, predict_pairs
from .ctdg import HistoryStore, NeighborRecord
from .dataio import Dataset, SplitSpec, chrono_split, inductive_mask, negative_sample_batch
from .metrics import accuracy_at_threshold, average_precision, mrr, roc_auc
from .nn import ParamStore, adam_step, bce_loss
from .samplers import (STRATEGIES, CandidatePool, FlashDims, GraphFeatures, NlbBuffer,
                       construct_truncation_weights, construct_uniform_weights, flash_scores,
                       flash_scores_parallel, init_flash, nlb_sample, nlb_update, select_top_k_batch,
                       uniform_indices, uniform_select_batch)

SCORER_INITS = ("random", "truncation", "uniform")
_STREAMS = ("backbone_init", "scorer_init", "negatives", "sampling", "nlb")


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    strategy: str = "flash"
    backbone: str = "attn_lite"
    k: int = 10
    n_pool: int | None = 32  # None scores the full history
    d_m: int = 16
    d_t: int = 8
    d_h: int = 64
    d_mlp: int = 64
    d_z: int = 32
    use_time: bool = True
    batch_size: int = 200
    lr: float = 1e-4
    epochs: int = 100
    patience: int = 20
    lambda_rank: float = 1.0
    seed: int = 0
    scorer_init: str = "random"
    freeze_scorer: bool = False
    literal_init: bool = False
    eval_mode: str = "transductive"
    inductive_frac: float = 0.1

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}; choose from {BACKBONES}")
        if self.scorer_init not in SCORER_INITS:
            raise ValueError(f"unknown scorer_init {self.scorer_init!r}")
        if self.eval_mode not in ("transductive", "inductive"):
            raise ValueError("eval_mode must be transductive or inductive")
        for name in ("k", "d_m", "d_t", "d_h", "d_mlp", "d_z", "batch_size", "epochs", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_pool is not None and self.n_pool < self.k:
            raise ValueError("candidate pool must hold at least k records")
        if self.lr <= 0 or self.lambda_rank < 0:
            raise ValueError("lr must be positive and lambda_rank non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def time_scale_of(ds: Dataset) -> float:
    """Mean inter-event gap; 1 for streams with no time extent."""
    if len(ds) < 2 or ds.t[-1] <= ds.t[0]:
        return 1.0
    return float((ds.t[-1] - ds.t[0]) / len(ds))


class Model:
    """Parameters, dimensions and static features of one configured run."""

    def __init__(self, cfg: TrainConfig, ds: Dataset):
        self.cfg = cfg
        self.feats = GraphFeatures.build(ds.edge_feat, ds.node_feat, time_scale_of(ds), ds.d_e)
        self.bdims = BackboneDims(cfg.backbone, ds.num_nodes, cfg.d_m, ds.d_e, cfg.d_t, cfg.d_z, cfg.k,
                                  cfg.use_time)
        self.fdims = FlashDims(cfg.d_m, ds.d_e, ds.d_v, cfg.d_t, cfg.d_h, cfg.d_mlp)
        self.rngs = {name: np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
                     for i, name in enumerate(_STREAMS)}
        self.store = ParamStore()
        init_backbone(self.store, self.bdims, self.rngs["backbone_init"], cfg.literal_init)
        self.frozen: frozenset = frozenset()
        if cfg.strategy == "flash":
            init_flash(self.store, self.fdims, self.rngs["scorer_init"], literal_init=cfg.literal_init)
            if cfg.scorer_init == "truncation":
                construct_truncation_weights(self.store, self.fdims)
            elif cfg.scorer_init == "uniform":
                construct_uniform_weights(self.store, self.fdims)
            if cfg.freeze_scorer:
                self.frozen = frozenset(self.store.names("flash."))

    @property
    def pool_width(self) -> int | None:
        return self.cfg.n_pool if self.cfg.strategy == "flash" else self.cfg.k


class Stream:
    """History store (and NLB buffers) filled while walking the event stream."""

    def __init__(self, ds: Dataset, k: int, nlb_rng=None):
        self.ds = ds
        self.hist = HistoryStore()
        self.nlb = NlbBuffer(k, nlb_rng) if nlb_rng is not None else None

    def append(self, i: int) -> None:
        s, d, t = int(self.ds.src[i]), int(self.ds.dst[i]), float(self.ds.t[i])
        self.hist.append(s, d, t, i)
        if self.nlb is not None:
            nlb_update(self.nlb, s, NeighborRecord(d, t, i))
            nlb_update(self.nlb, d, NeighborRecord(s, t, i))

    def gather(self, v: int, t: float, strategy: str, k: int, n_pool, rng):
        """Candidate columns ``(nbr, t, eid, rank)`` of ``v`` strictly before ``t``."""
        H = self.hist.view(v, t)
        n = len(H)
        if strategy == "uniform":
            idx = uniform_indices(n, k, rng)
            nbr, tu, eid = H.take(idx)
            return nbr, tu, eid, n - idx
        if strategy == "nlb":
            recs = nlb_sample(self.nlb, v, k, t).records
            nbr = np.array([r.neighbor for r in recs], dtype=np.int64)
            tu = np.array([r.t for r in recs], dtype=np.float64)
            eid = np.array([r.edge_feat_ref for r in recs], dtype=np.int64)
            return nbr, tu, eid, np.zeros(len(recs))
        width = k if strategy == "truncation" else (n if n_pool is None else n_pool)
        start = max(0, n - width)
        nbr, tu, eid = H.arrays(start)
        return nbr, tu, eid, n - np.arange(start, n)


@dataclass
class PendingBatch:
    """Pairs gathered from the stream, waiting for one forward pass.

    Pair ``p`` owns query rows ``2p`` (its ``v_i`` side) and ``2p+1``.
    """

    vi: list = field(default_factory=list)
    vj: list = field(default_factory=list)
    t: list = field(default_factory=list)
    y: list = field(default_factory=list)
    cols: list = field(default_factory=list)

    def __len__(self):
        return len(self.y)

    def add(self, stream: Stream, vi, vj, t, y, model: Model, rng):
        c = model.cfg
        self.vi.append(vi)
        self.vj.append(vj)
        self.t.append(t)
        self.y.append(y)
        self.cols.append(stream.gather(vi, t, c.strategy, c.k, c.n_pool, rng))
        self.cols.append(stream.gather(vj, t, c.strategy, c.k, c.n_pool, rng))

    def pool(self, min_width: int) -> CandidatePool:
        Q = len(self.cols)
        W = max([min_width] + [len(col[0]) for col in self.cols])
        nbr = np.zeros((Q, W), dtype=np.int64)
        tu = np.zeros((Q, W))
        eid = np.full((Q, W), -1, dtype=np.int64)
        rank = np.zeros((Q, W))
        mask = np.zeros((Q, W), dtype=bool)
        for q, (a, b, c, r) in enumerate(self.cols):
            m = len(a)
            nbr[q, :m], tu[q, :m], eid[q, :m], rank[q, :m], mask[q, :m] = a, b, c, r, True
        v = np.empty(Q, dtype=np.int64)
        w = np.empty(Q, dtype=np.int64)
        v[0::2], v[1::2] = self.vi, self.vj
        w[0::2], w[1::2] = self.vj, self.vi
        tq = np.repeat(np.asarray(self.t, dtype=np.float64), 2)
        return CandidatePool(v, w, tq, nbr, tu, eid, mask, rank)


def neighbor_batch(pool: CandidatePool, sel: np.ndarray, k: int) -> NeighborBatch:
    """Left-align the selected candidates (kept in time order) into ``k`` slots."""
    if sel.shape[1] < k:
        pad = k - sel.shape[1]
        sel = np.pad(sel, ((0, 0), (0, pad)))
        nbr, tu, eid = (np.pad(a, ((0, 0), (0, pad))) for a in (pool.nbr, pool.tu, pool.eid))
    else:
        nbr, tu, eid = pool.nbr, pool.tu, pool.eid
    order = np.argsort(~sel, axis=1, kind="stable")[:, :k]
    mask = np.take_along_axis(sel, order, 1)
    return NeighborBatch(pool.vi, pool.t,
                         np.where(mask, np.take_along_axis(nbr, order, 1), 0),
                         np.where(mask, np.take_along_axis(tu, order, 1), 0.0),
                         np.where(mask, np.take_along_axis(eid, order, 1), -1),
                         mask)


@dataclass
class PairOutcome:
    """Per-pair quantities feeding the ranking loss (scalars or ``[P]`` arrays)."""

    p_flash: object
    p_uni: object
    delta: object
    s_vi: object
    s_vj: object
    s_uni_vi: object
    s_uni_vj: object
    y: object
    has_vi: object = True
    has_vj: object = True


def ranking_loss(o: PairOutcome) -> Tensor:
    """Four-branch pairwise logistic loss, summed over pairs.

    With ``sgn = +1`` for ``(y=1, delta>0)`` and ``(y=0, delta<=0)`` and
    ``-1`` otherwise, each pair contributes
    ``-log sig(sgn*(s_vj - s_uni_vj)) - log sig(sgn*(s_vi - s_uni_vi))``.
    An endpoint with an empty history contributes nothing.
    """
    y = np.asarray(o.y)
    delta = np.asarray(o.delta.data if isinstance(o.delta, Tensor) else o.delta, dtype=np.float64)
    sgn = np.where(((y == 1) & (delta > 0)) | ((y == 0) & (delta <= 0)), 1.0, -1.0)
    total = ad.Tensor(0.0)
    for s_f, s_u, has in ((o.s_vj, o.s_uni_vj, o.has_vj), (o.s_vi, o.s_uni_vi, o.has_vi)):
        diff = ad.add(ad.as_tensor(s_f), ad.neg(ad.as_tensor(s_u)))
        term = ad.neg(ad.log_sigmoid(ad.mul(diff, sgn)))
        total = ad.add(total, ad.sum(ad.mul(term, np.asarray(has, dtype=np.float64))))
    return total


@dataclass
class BatchResult:
    p: np.ndarray
    y: np.ndarray
    loss_task: float
    loss_rank: float


def _mean_scores(scores: Tensor, sel: np.ndarray) -> Tensor:
    count = np.maximum(sel.sum(axis=1), 1)
    return ad.mul(ad.sum(ad.mul(scores, sel), axis=1), 1.0 / count)


def forward_batch(model: Model, batch: PendingBatch, rng, train: bool, threads: int = 1,
                  executor=None) -> tuple[Tensor, Tensor | None, BatchResult]:
    """Predict every pair; returns (task loss, ranking loss or None, result).

    At inference, ``threads > 1`` scores FLASH candidates on a thread pool.
    """
    cfg = model.cfg
    y = np.asarray(batch.y, dtype=np.float64)
    pool = batch.pool(cfg.k)
    rank_loss = None
    if cfg.strategy != "flash":
        nb = neighbor_batch(pool, pool.mask, cfg.k)
        p = predict_pairs(model.store, model.bdims, nb, model.feats)
    else:
        want_rank = train and cfg.lambda_rank > 0
        if want_rank:
            scores = flash_scores(model.store, pool, model.feats)
        elif threads > 1 and not train:
            scores = ad.Tensor(flash_scores_parallel(model.store, pool, model.feats, threads, executor=executor))
        else:
            with ad.no_grad():
                scores = flash_scores(model.store, pool, model.feats)
        sel_f = select_top_k_batch(scores.data, pool.mask, cfg.k, rng)
        p = predict_pairs(model.store, model.bdims, neighbor_batch(pool, sel_f, cfg.k), model.feats)
        if train:
            sel_u = uniform_select_batch(pool.mask, cfg.k, rng)
            with ad.no_grad():
                p_uni = predict_pairs(model.store, model.bdims, neighbor_batch(pool, sel_u, cfg.k), model.feats)
            s_f = _mean_scores(scores, sel_f)
            s_u = _mean_scores(scores, sel_u)
            has = pool.mask.any(axis=1)
            out = PairOutcome(p.data, p_uni.data, p.data - p_uni.data, s_f[0::2], s_f[1::2], s_u[0::2],
                              s_u[1::2], y, has[0::2], has[1::2])
            if want_rank:
                rank_loss = ranking_loss(out)
            else:
                with ad.no_grad():
                    rank_loss = ranking_loss(out)
    task = bce_loss(p, y)
    res = BatchResult(p.data.copy(), y, float(task.data),
                      float(rank_loss.data) if rank_loss is not None else 0.0)
    return task, rank_loss, res


def _metric_record(epoch, split, p, y, loss_task, loss_rank, wall_ms) -> dict:
    rec = {"epoch": epoch, "split": split, "loss_task": loss_task, "loss_rank": loss_rank,
           "ap": float("nan"), "auc": float("nan"), "acc": float("nan"), "wall_ms": wall_ms}
    if y.size and 0 < y.sum() < y.size:
        rec.update(ap=average_precision(p, y), auc=roc_auc(p, y), acc=accuracy_at_threshold(p, y))
    return rec


class Trainer:
    """One configured run over one dataset: splits, model, epochs, evaluation."""

    def __init__(self, cfg: TrainConfig, ds: Dataset, split_spec: SplitSpec | None = None):
        if len(ds) == 0:
            raise TrainError("empty dataset")
        self.cfg = cfg
        self.ds = ds
        self.splits = chrono_split(ds, split_spec or SplitSpec(seed=cfg.seed))
        self.model = Model(cfg, ds)
        self.mask = None
        if cfg.eval_mode == "inductive":
            self.mask = inductive_mask(ds, self.splits, cfg.inductive_frac, cfg.seed)
        self.universe = ds.dst_universe()
        self.epoch = 0
        self.history: list[dict] = []

    # ---------------------------------------------------------------- pairs

    def _negatives(self, idx: np.ndarray, rng) -> np.ndarray:
        ds = self.ds
        if ds.neg_dst is not None:
            neg = ds.neg_dst[idx].copy()
            missing = neg < 0
            if missing.any():
                neg[missing] = negative_sample_batch(ds.src[idx][missing], ds.dst[idx][missing], ds, rng,
                                                     self.universe)
            return neg
        return negative_sample_batch(ds.src[idx], ds.dst[idx], ds, rng, self.universe)

    def _walk(self, stop: int, predict: np.ndarray, rngs: dict, train: bool, skip=None):
        """Replay events ``[0, stop)``; predict events flagged in ``predict``.

        ``skip`` flags events left out of the stream entirely.
        Yields a ``BatchResult`` per mini-batch.
        """
        cfg, ds, model = self.cfg, self.ds, self.model
        stream = Stream(ds, cfg.k, rngs["nlb"] if cfg.strategy == "nlb" else None)
        pred_idx = np.flatnonzero(predict[:stop])
        neg = np.full(len(ds), -1, dtype=np.int64)
        if pred_idx.size:
            neg[pred_idx] = self._negatives(pred_idx, rngs["negatives"])
        batch = PendingBatch()
        for i in range(stop):
            if skip is not None and skip[i]:
                continue
            if predict[i]:
                s, d, t = int(ds.src[i]), int(ds.dst[i]), float(ds.t[i])
                batch.add(stream, s, d, t, 1, model, rngs["sampling"])
                batch.add(stream, s, int(neg[i]), t, 0, model, rngs["sampling"])
            stream.append(i)
            if len(batch) >= 2 * cfg.batch_size:
                yield self._run_batch(batch, rngs["sampling"], train)
                batch = PendingBatch()
        if len(batch):
            yield self._run_batch(batch, rngs["sampling"], train)

    def _run_batch(self, batch: PendingBatch, rng, train: bool) -> BatchResult:
        model = self.model
        if not train:
            with ad.no_grad():
                return forward_batch(model, batch, rng, False)[2]
        task, rank, res = forward_batch(model, batch, rng, True)
        loss = task
        if rank is not None and self.cfg.lambda_rank > 0:
            loss = ad.add(task, ad.mul(rank, self.cfg.lambda_rank))
        loss.backward()
        frozen = model.frozen
        if self.cfg.strategy == "flash" and self.cfg.lambda_rank == 0:
            # the scorer only learns through the ranking loss
            frozen = frozen | frozenset(model.store.names("flash."))
        adam_step(model.store, self.cfg.lr, frozen=frozen)
        return res

    # ---------------------------------------------------------------- epochs

    def train_epoch(self) -> dict:
        tr = self.splits["train"]
        if len(tr) == 0:
            raise TrainError("empty training split")
        self.epoch += 1
        n = len(self.ds)
        predict = np.zeros(n, dtype=bool)
        predict[tr.start:tr.stop] = True
        skip = None
        if self.mask is not None:
            skip = np.zeros(n, dtype=bool)
            skip[tr.start:tr.stop] = ~self.mask.train_keep
            predict &= ~skip
        t0 = time.perf_counter()
        ps, ys, lt, lr, npairs = [], [], 0.0, 0.0, 0
        for res in self._walk(tr.stop, predict, self.model.rngs, True, skip):
            ps.append(res.p)
            ys.append(res.y)
            lt += res.loss_task
            lr += res.loss_rank
            npairs += res.y.size
        wall = (time.perf_counter() - t0) * 1000
        p, y = np.concatenate(ps), np.concatenate(ys)
        rec = _metric_record(self.epoch, "train", p, y, lt / max(npairs, 1), lr / max(npairs, 1), wall)
        self.history.append(rec)
        return rec

    def eval_rngs(self, split: str) -> dict:
        code = {"train": 0, "val": 1, "test": 2}[split]
        return {name: np.random.default_rng(np.random.SeedSequence(self.cfg.seed, spawn_key=(100 + code, i)))
                for i, name in enumerate(_STREAMS)}

    def eval_predict_mask(self, split: str, mode: str | None = None) -> np.ndarray:
        mode = mode or self.cfg.eval_mode
        r = self.splits[split]
        predict = np.zeros(len(self.ds), dtype=bool)
        if mode == "inductive":
            mask = self.mask or inductive_mask(self.ds, self.splits, self.cfg.inductive_frac, self.cfg.seed)
            if split == "train":
                raise ValueError("inductive evaluation covers val/test only")
            predict[mask.eval_index[split]] = True
        else:
            predict[r.start:r.stop] = True
        return predict

    def predict_split(self, split: str, mode: str | None = None):
        """Probabilities and labels for every evaluated pair (positives and negatives)."""
        predict = self.eval_predict_mask(split, mode)
        if not predict.any():
            raise TrainError(f"no events to evaluate in {split}")
        stop = self.splits[split].stop
        ps, ys = [], []
        for res in self._walk(stop, predict, self.eval_rngs(split), False):
            ps.append(res.p)
            ys.append(res.y)
        return np.concatenate(ps), np.concatenate(ys)

    def evaluate(self, split: str = "test", mode: str | None = None) -> dict:
        t0 = time.perf_counter()
        p, y = self.predict_split(split, mode)
        rec = _metric_record(self.epoch, split, p, y, float(bce_loss(ad.Tensor(p), y).data) / y.size, 0.0,
                             (time.perf_counter() - t0) * 1000)
        # pairs are laid out (positive, negative) per event
        rec["mrr"] = mrr(zip(p.reshape(-1, 2), np.tile([1, 0], (p.size // 2, 1))))
        rec["pairs"] = int(y.size)
        return rec

    def fit(self, log=None) -> list[dict]:
        """Train with early stopping on validation AP, restore the best epoch, test."""
        best_ap, best_snap, best_epoch, stale = -math.inf, None, 0, 0
        for _ in range(self.cfg.epochs):
            rec = self.train_epoch()
            if log:
                log(rec)
            val = self.evaluate("val")
            self.history.append(val)
            if log:
                log(val)
            if val["ap"] > best_ap:
                best_ap, best_snap, best_epoch, stale = val["ap"], self.model.store.snapshot(), self.epoch, 0
            else:
                stale += 1
                if stale >= self.cfg.patience:
                    break
        if best_snap is not None:
            self.model.store.restore(best_snap)
        test = self.evaluate("test")
        test["best_epoch"] = best_epoch
        self.history.append(test)
        if log:
            log(test)
        return self.history


def forward_pair(trainer: Trainer, stream: Stream, vi: int, vj: int, t: float, y: int, rng) -> PairOutcome:
    """FLASH and uniform passes for one pair against ``stream``'s histories."""
    model = trainer.model
    if model.cfg.strategy != "flash":
        raise ValueError("forward_pair needs the flash strategy")
    batch = PendingBatch()
    batch.add(stream, vi, vj, t, y, model, rng)
    pool = batch.pool(model.cfg.k)
    k = model.cfg.k
    scores = flash_scores(model.store, pool, model.feats)
    sel_f = select_top_k_batch(scores.data, pool.mask, k, rng)
    sel_u = uniform_select_batch(pool.mask, k, rng)
    p_f = predict_pairs(model.store, model.bdims, neighbor_batch(pool, sel_f, k), model.feats)
    with ad.no_grad():
        p_u = predict_pairs(model.store, model.bdims, neighbor_batch(pool, sel_u, k), model.feats)
    s_f, s_u = _mean_scores(scores, sel_f), _mean_scores(scores, sel_u)
    has = pool.mask.any(axis=1)
    return PairOutcome(p_f, p_u, float(p_f.data[0] - p_u.data[0]), s_f[0:1], s_f[1:2], s_u[0:1], s_u[1:2],
                       np.array([y]), has[0:1], has[1:2])
