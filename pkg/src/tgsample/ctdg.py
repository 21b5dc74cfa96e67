"""Event streams and the per-node historical neighborhood store."""

from __future__ import annotations

from bisect import bisect_left
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class CTDGError(ValueError):
    pass


class MonotonicityViolation(CTDGError):
    pass


class SelfLoop(CTDGError):
    pass


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    t: float
    edge_feat: tuple = ()
    label: int | None = None


class NeighborRecord(NamedTuple):
    neighbor: int
    t: float
    edge_feat_ref: int  # row in the edge-feature matrix, -1 when absent


class HistoryView(Sequence):
    """Read-only window over the first ``n`` records of one node's history.

    Indexing and slicing cost O(len(result)); building a view costs one
    bisection, so reading the tail of a long history does not scan it.
    """

    __slots__ = ("_nbr", "_t", "_eid", "_n")

    def __init__(self, nbr, t, eid, n):
        self._nbr, self._t, self._eid, self._n = nbr, t, eid, n

    def __len__(self):
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(self._n))]
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return NeighborRecord(self._nbr[i], self._t[i], self._eid[i])

    def arrays(self, start: int = 0):
        """Columns (neighbor, t, edge ref) of records ``start:`` as numpy arrays."""
        start = max(0, start)
        return (
            np.asarray(self._nbr[start:self._n], dtype=np.int64),
            np.asarray(self._t[start:self._n], dtype=np.float64),
            np.asarray(self._eid[start:self._n], dtype=np.int64),
        )

    def take(self, idx):
        """Columns of the records at positions ``idx`` (each < len)."""
        nbr, t, eid = self._nbr, self._t, self._eid
        return (
            np.array([nbr[i] for i in idx], dtype=np.int64),
            np.array([t[i] for i in idx], dtype=np.float64),
            np.array([eid[i] for i in idx], dtype=np.int64),
        )


class HistoryStore:
    """Append-only, time-sorted interaction records per node.

    Every interaction is recorded at both endpoints. Queries at time ``t``
    see only records with ``record.t < t``.
    """

    def __init__(self, allow_self_loops: bool = False):
        self.allow_self_loops = allow_self_loops
        self._nbr: dict[int, list[int]] = {}
        self._t: dict[int, list[float]] = {}
        self._eid: dict[int, list[int]] = {}
        self.num_events = 0
        self.last_t = -np.inf

    def _push(self, v, u, t, eid):
        if v not in self._nbr:
            self._nbr[v], self._t[v], self._eid[v] = [], [], []
        self._nbr[v].append(u)
        self._t[v].append(t)
        self._eid[v].append(eid)

    def append(self, src: int, dst: int, t: float, eid: int = -1) -> None:
        t = float(t)
        if t < self.last_t:
            raise MonotonicityViolation(f"event at t={t} after t={self.last_t}")
        if t < 0:
            raise CTDGError(f"negative timestamp {t}")
        if src == dst and not self.allow_self_loops:
            raise SelfLoop(f"self loop on node {src}")
        self._push(src, dst, t, eid)
        if src != dst:
            self._push(dst, src, t, eid)
        self.last_t = t
        self.num_events += 1

    def view(self, v: int, t: float) -> HistoryView:
        times = self._t.get(v)
        if times is None:
            return HistoryView((), (), (), 0)
        return HistoryView(self._nbr[v], times, self._eid[v], bisect_left(times, t))

    def degree(self, v: int) -> int:
        return len(self._t.get(v, ()))


def append_event(store: HistoryStore, e: Event, eid: int = -1) -> None:
    store.append(e.src, e.dst, e.t, eid)


def history_query(store: HistoryStore, v: int, t: float) -> list[NeighborRecord]:
    """All records of ``v`` strictly before ``t``, oldest first (a multiset)."""
    return list(store.view(v, t))


def rank_of(records: Sequence, u_index: int) -> int:
    """Recency rank of ``records[u_index]``: 1 is the most recent record.

    ``records`` must be sorted by time ascending, as returned by the store.
    """
    n = len(records)
    if not 0 <= u_index < n:
        raise IndexError(f"record index {u_index} out of range for {n} records")
    return n - u_index
