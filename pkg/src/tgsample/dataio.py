"""CSV ingestion, chronological splits, inductive masking and negative sampling.

CSV layout (UTF-8, header required)::

    src,dst,t[,label][,f0,...,f{d_E-1}]

Eval-pair files written next to synthetic streams use ``src,pos_dst,neg_dst,t``
with one row per event, in stream order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .ctdg import Event


class DataError(ValueError):
    pass


class MalformedRow(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class EmptyFile(DataError):
    pass


class UnsplittableStream(DataError):
    pass


class EmptyEvalSet(DataError):
    pass


@dataclass
class Dataset:
    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    edge_feat: np.ndarray
    num_nodes: int
    name: str = "dataset"
    labels: np.ndarray | None = None
    node_feat: np.ndarray | None = None
    bipartite: bool = False
    node_ids: list = field(default_factory=list)
    # proof-paired negative destination per event (-1 when unpaired)
    neg_dst: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.float64)
        n = self.src.size
        if self.edge_feat is None:
            self.edge_feat = np.zeros((n, 0))
        ef = np.asarray(self.edge_feat, dtype=np.float64)
        if ef.size == 0:
            self.edge_feat = np.zeros((n, ef.shape[1] if ef.ndim == 2 else 0))
        else:
            self.edge_feat = ef.reshape(n, -1)
        if not self.node_ids:
            self.node_ids = list(range(self.num_nodes))
        if n and np.any(np.diff(self.t) < 0):
            raise DataError("events must be sorted by time")

    def __len__(self):
        return int(self.src.size)

    @property
    def d_e(self) -> int:
        return int(self.edge_feat.shape[1])

    @property
    def d_v(self) -> int:
        return 0 if self.node_feat is None else int(self.node_feat.shape[1])

    @property
    def events(self) -> list[Event]:
        labels = self.labels if self.labels is not None else [None] * len(self)
        return [
            Event(int(s), int(d), float(t), tuple(f), None if lab is None else int(lab))
            for s, d, t, f, lab in zip(self.src, self.dst, self.t, self.edge_feat, labels)
        ]

    def dst_universe(self) -> np.ndarray:
        if self.bipartite:
            return np.unique(self.dst)
        return np.arange(self.num_nodes)


def _map_ids(raw):
    try:
        keys = sorted(set(int(x) for x in raw))
        conv = int
    except ValueError:
        keys = sorted(set(raw))
        conv = str
    index = {k: i for i, k in enumerate(keys)}
    return keys, np.array([index[conv(x)] for x in raw], dtype=np.int64), conv


def load_csv(path, name: str | None = None, bipartite: bool | None = None) -> Dataset:
    """Read an edge-list CSV into a Dataset with dense node ids.

    Node ids are remapped to ``0..num_nodes-1`` in sorted order (numeric if
    every id parses as an integer), so a stream already using dense ids
    maps to itself. Rows are stably sorted by time. ``bipartite=None``
    infers the flag from whether the source and destination sets overlap.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None:
            raise EmptyFile(f"{path} is empty")
        header = [h.strip() for h in header]
        if header[:3] != ["src", "dst", "t"]:
            raise MalformedRow(f"{path}: header must start with src,dst,t")
        has_label = len(header) > 3 and header[3] == "label"
        n_feat = len(header) - 3 - int(has_label)
        src_raw, dst_raw, ts, labels, feats = [], [], [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            src_raw.append(row[0].strip())
            dst_raw.append(row[1].strip())
            t = float(row[2])
            if not math.isfinite(t) or t < 0:
                raise MalformedRow(f"{path}:{lineno}: bad timestamp {row[2]!r}")
            ts.append(t)
            off = 3
            if has_label:
                labels.append(int(float(row[3])))
                off = 4
            fv = [float(x) for x in row[off:]]
            if not all(math.isfinite(x) for x in fv):
                raise NonFiniteFeature(f"{path}:{lineno}: non-finite feature")
            feats.append(fv)
    if not ts:
        raise EmptyFile(f"{path} has no rows")
    keys, ids, _ = _map_ids(src_raw + dst_raw)
    n = len(ts)
    src, dst = ids[:n], ids[n:]
    order = np.argsort(np.asarray(ts), kind="stable")
    if bipartite is None:
        bipartite = not (set(src.tolist()) & set(dst.tolist()))
    return Dataset(
        src=src[order],
        dst=dst[order],
        t=np.asarray(ts)[order],
        edge_feat=np.asarray(feats, dtype=np.float64).reshape(n, n_feat)[order],
        num_nodes=len(keys),
        name=name or path.stem,
        labels=np.asarray(labels, dtype=np.int64)[order] if has_label else None,
        bipartite=bool(bipartite),
        node_ids=list(keys),
    )


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly; integral values stay compact
    return str(int(x)) if float(x).is_integer() and abs(x) < 2**53 else repr(float(x))


def write_csv(ds: Dataset, path) -> int:
    path = Path(path)
    header = ["src", "dst", "t"]
    if ds.labels is not None:
        header.append("label")
    header += [f"f{i}" for i in range(ds.d_e)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = [ds.node_ids[ds.src[i]], ds.node_ids[ds.dst[i]], _fmt(ds.t[i])]
            if ds.labels is not None:
                row.append(int(ds.labels[i]))
            row += [repr(float(x)) for x in ds.edge_feat[i]]
            w.writerow(row)
    return len(ds)


def write_pairs(ds: Dataset, path) -> int:
    if ds.neg_dst is None:
        raise DataError("dataset has no paired negatives")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["src", "pos_dst", "neg_dst", "t"])
        for s, d, n, t in zip(ds.src, ds.dst, ds.neg_dst, ds.t):
            w.writerow([ds.node_ids[s], ds.node_ids[d], ds.node_ids[n] if n >= 0 else "", _fmt(t)])
    return len(ds)


def load_pairs(ds: Dataset, path) -> Dataset:
    """Attach paired negatives from an eval-pair file (one row per event, stream order)."""
    index = {str(k): i for i, k in enumerate(ds.node_ids)}
    neg = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["src", "pos_dst", "neg_dst", "t"]:
            raise MalformedRow(f"{path}: expected header src,pos_dst,neg_dst,t")
        for i, row in enumerate(reader):
            if len(row) != 4:
                raise MalformedRow(f"{path}:{i + 2}: expected 4 columns")
            if i >= len(ds) or index.get(row[0]) != ds.src[i] or index.get(row[1]) != ds.dst[i] \
                    or float(row[3]) != ds.t[i]:
                raise MalformedRow(f"{path}:{i + 2}: pair does not match event {i}")
            neg.append(index[row[2]] if row[2] != "" else -1)
    if len(neg) != len(ds):
        raise MalformedRow(f"{path}: {len(neg)} pairs for {len(ds)} events")
    ds.neg_dst = np.asarray(neg, dtype=np.int64)
    return ds


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.15
    test_frac: float = 0.15
    inductive_node_frac: float = 0.10
    seed: int = 0

    def __post_init__(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")


def chrono_split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> dict[str, range]:
    """Contiguous train/val/test index ranges by event count.

    Train gets ``floor(train_frac * n)`` events, val ``floor(val_frac * n)``,
    test the remainder. A boundary that would cut through a group of equal
    timestamps moves forward so the whole group stays in the earlier split.
    """
    n = len(ds)
    if n < 10:
        raise UnsplittableStream(f"need at least 10 events, got {n}")
    t = ds.t

    def settle(b):
        while 0 < b < n and t[b] == t[b - 1]:
            b += 1
        return b

    b1 = settle(int(math.floor(spec.train_frac * n)))
    b2 = settle(max(b1, int(math.floor(spec.train_frac * n)) + int(math.floor(spec.val_frac * n))))
    if not (0 < b1 < b2 < n):
        raise UnsplittableStream("timestamp ties leave an empty split")
    return {"train": range(0, b1), "val": range(b1, b2), "test": range(b2, n)}


def write_split_manifest(splits: dict[str, range], path) -> None:
    lines = [f"{name},{r.start},{r.stop}" for name, r in splits.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_split_manifest(path) -> dict[str, range]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            name, a, b = line.split(",")
            out[name] = range(int(a), int(b))
    return out


@dataclass
class InductiveMask:
    new_nodes: frozenset
    train_keep: np.ndarray  # bool per event in the train range
    eval_index: dict  # split name -> event indices touching a new node


def inductive_mask(ds: Dataset, splits: dict[str, range], frac: float = 0.10, seed: int = 0,
                   new_nodes=None) -> InductiveMask:
    """Hold out a seeded fraction of nodes as unseen at training time.

    Training events touching a held-out node are dropped; the inductive
    val/test sets keep only events that touch at least one held-out node.
    ``new_nodes`` overrides sampling.
    """
    if new_nodes is None:
        if not 0 < frac < 1:
            raise ValueError("frac must lie in (0, 1)")
        rng = np.random.default_rng(seed)
        count = max(1, int(round(frac * ds.num_nodes)))
        new_nodes = rng.choice(ds.num_nodes, size=count, replace=False).tolist()
        check_empty = True
    else:
        check_empty = False
    new = np.zeros(ds.num_nodes, dtype=bool)
    new[list(new_nodes)] = True
    touches = new[ds.src] | new[ds.dst]
    tr = splits["train"]
    keep = ~touches[tr.start:tr.stop]
    eval_index = {}
    for name in ("val", "test"):
        r = splits[name]
        eval_index[name] = np.arange(r.start, r.stop)[touches[r.start:r.stop]]
    if check_empty and all(v.size == 0 for v in eval_index.values()):
        raise EmptyEvalSet("no val/test event touches a held-out node")
    return InductiveMask(frozenset(int(x) for x in new_nodes), keep, eval_index)


def negative_sample(positive: Event, ds: Dataset, rng, universe=None) -> Event:
    """Copy of ``positive`` with a uniform negative destination.

    Drawn from the destination side when the graph is bipartite and from all
    nodes otherwise, never equal to the positive destination (nor the source
    on non-bipartite graphs, where it would be a self loop).
    """
    if universe is None:
        universe = ds.dst_universe()
    src, dst = positive.src, positive.dst
    excl = (dst,) if ds.bipartite else (src, dst)
    cand = universe[~np.isin(universe, excl)]
    if cand.size == 0:
        raise DataError("negative-sampling universe has no candidate")
    return replace(positive, dst=int(cand[rng.integers(cand.size)]), label=None)


def negative_sample_batch(src, dst, ds: Dataset, rng, universe=None) -> np.ndarray:
    """Vectorized ``negative_sample`` for many positives (rejection sampling)."""
    if universe is None:
        universe = ds.dst_universe()
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    out = universe[rng.integers(universe.size, size=dst.size)]
    for _ in range(1000):
        bad = out == dst
        if not ds.bipartite:
            bad |= out == src
        if not bad.any():
            return out
        out[bad] = universe[rng.integers(universe.size, size=int(bad.sum()))]
    raise DataError("negative-sampling universe has no candidate")
