"""Weekly interaction graphs.

Aggregates one week of events into an undirected weighted graph.  A direct
message adds 1 to its pair; a group event with k participants adds 1/k to
each participant pair.  The harmonic variant keeps directed totals per pair
and symmetrizes with the harmonic mean, dropping one-sided pairs.

Graphs live on a shared :class:`NodeIndex` (employee id <-> integer) and
store adjacency as a scipy CSR matrix; per-pair accumulation uses
``math.fsum`` so edge weights are exact rounded sums independent of event
order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np
from scipy import sparse

from .errors import DataError
from .events import DIRECT, GROUP, EventRecord


class NodeIndex:
    """Append-only bidirectional mapping employee id <-> integer index."""

    def __init__(self, ids: Iterable[str] = ()):
        self._ids: list[str] = []
        self._pos: dict[str, int] = {}
        for ident in ids:
            self.intern(ident)

    def intern(self, ident: str) -> int:
        pos = self._pos.get(ident)
        if pos is None:
            pos = len(self._ids)
            self._ids.append(ident)
            self._pos[ident] = pos
        return pos

    def get(self, ident: str) -> int | None:
        return self._pos.get(ident)

    def ident(self, i: int) -> str:
        return self._ids[i]

    def idents(self, idx: Iterable[int]) -> list[str]:
        return [self._ids[i] for i in idx]

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, ident: str) -> bool:
        return ident in self._pos


@dataclass
class WeeklyGraph:
    """Undirected weighted graph of one calendar week.

    A node is present iff it has at least one edge that week; isolated
    employees are simply absent.
    """

    week: int
    index: NodeIndex
    adj: sparse.csr_matrix
    _active: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_universe(self) -> int:
        return self.adj.shape[0]

    def active_indices(self) -> np.ndarray:
        """Integer indices of employees with >= 1 edge this week."""
        if self._active is None:
            deg = np.diff(self.adj.indptr)
            self._active = np.flatnonzero(deg > 0)
        return self._active

    def active_mask(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        out = np.zeros(len(idx), dtype=bool)
        known = idx < self.n_universe
        ik = idx[known]
        out[known] = (self.adj.indptr[ik + 1] - self.adj.indptr[ik]) > 0
        return out

    def nodes(self) -> set[str]:
        return set(self.index.idents(self.active_indices()))

    def n_edges(self) -> int:
        return self.adj.nnz // 2

    def total_weight(self) -> float:
        # each edge appears twice in the symmetric CSR; halving is exact
        return math.fsum(self.adj.data) / 2.0

    def neighbor_idx(self, i: int) -> np.ndarray:
        return self.adj.indices[self.adj.indptr[i] : self.adj.indptr[i + 1]]

    def neighbor_weights(self, i: int) -> np.ndarray:
        return self.adj.data[self.adj.indptr[i] : self.adj.indptr[i + 1]]

    def neighbors(self, ident: str) -> set[str]:
        """Adjacent employee ids; empty set when the node is absent."""
        i = self.index.get(ident)
        if i is None or i >= self.n_universe:
            return set()
        return set(self.index.idents(self.neighbor_idx(i)))

    def weight(self, u: str, v: str) -> float:
        iu, iv = self.index.get(u), self.index.get(v)
        if iu is None or iv is None or iu >= self.n_universe or iv >= self.n_universe:
            return 0.0
        cols = self.neighbor_idx(iu)
        pos = np.searchsorted(cols, iv)
        if pos < len(cols) and cols[pos] == iv:
            return float(self.neighbor_weights(iu)[pos])
        return 0.0

    def degree_array(self) -> np.ndarray:
        return np.diff(self.adj.indptr)

    def strength_array(self) -> np.ndarray:
        return np.asarray(self.adj.sum(axis=1)).ravel()

    def induced_dense(self, members_idx: np.ndarray) -> np.ndarray:
        """Dense symmetric weight matrix among ``members_idx`` (given order)."""
        members_idx = np.asarray(members_idx, dtype=np.int64)
        k = len(members_idx)
        w = np.zeros((k, k))
        if k == 0:
            return w
        order = np.argsort(members_idx, kind="stable")
        sorted_members = members_idx[order]
        indptr, indices, data = self.adj.indptr, self.adj.indices, self.adj.data
        for row, i in enumerate(members_idx):
            if i >= self.n_universe:
                continue
            lo, hi = indptr[i], indptr[i + 1]
            cols = indices[lo:hi]
            pos = np.searchsorted(sorted_members, cols)
            pos[pos >= k] = k - 1
            hit = sorted_members[pos] == cols
            w[row, order[pos[hit]]] = data[lo:hi][hit]
        return w

    def edge_list(self) -> list[tuple[str, str, float]]:
        """Edges as (min id, max id, weight), sorted by the id pair."""
        coo = sparse.triu(self.adj, k=1).tocoo()
        rows = []
        for i, j, w in zip(coo.row, coo.col, coo.data):
            a, b = self.index.ident(int(i)), self.index.ident(int(j))
            if b < a:
                a, b = b, a
            rows.append((a, b, float(w)))
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows

    @classmethod
    def from_pair_arrays(
        cls,
        week: int,
        index: NodeIndex,
        u: np.ndarray,
        v: np.ndarray,
        w: np.ndarray,
        n_universe: int | None = None,
    ) -> "WeeklyGraph":
        """Build from unordered unique pairs (u < v) and weights."""
        n = n_universe if n_universe is not None else len(index)
        coo = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(n, n),
        )
        adj = coo.tocsr()
        adj.sum_duplicates()
        return cls(week=week, index=index, adj=adj)


@dataclass
class DenseGraph:
    """Small undirected weighted graph with dense adjacency.

    Used for induced group subgraphs and ego networks; ``ids`` are indices
    into a :class:`NodeIndex` (or arbitrary labels in tests).
    """

    ids: np.ndarray
    w: np.ndarray

    @property
    def n(self) -> int:
        return len(self.ids)

    def adjacency_bool(self) -> np.ndarray:
        return self.w > 0

    def n_edges(self) -> int:
        return int(np.count_nonzero(np.triu(self.w, k=1)))

    def total_weight(self) -> float:
        iu, ju = np.triu_indices(self.n, k=1)
        vals = self.w[iu, ju]
        return math.fsum(vals[vals > 0.0])

    @classmethod
    def from_edges(
        cls, node_ids: Sequence, edges: Iterable[tuple]
    ) -> "DenseGraph":
        """Test helper: build from labelled nodes and (u, v[, w]) edges."""
        ids = list(node_ids)
        pos = {ident: i for i, ident in enumerate(ids)}
        w = np.zeros((len(ids), len(ids)))
        for edge in edges:
            u, v = edge[0], edge[1]
            wt = float(edge[2]) if len(edge) > 2 else 1.0
            w[pos[u], pos[v]] = wt
            w[pos[v], pos[u]] = wt
        return cls(ids=np.asarray(ids, dtype=object), w=w)


def _group_share(ev: EventRecord) -> float:
    # dilution by total participant count; normally k == len(participants)
    return 1.0 / ev.group_size


def build_weekly_graph(
    events: Sequence[EventRecord],
    week: int,
    index: NodeIndex,
    weighting: str = "sum",
) -> WeeklyGraph:
    """Aggregate one week of events into a :class:`WeeklyGraph`.

    ``weighting='sum'``: direct events add 1 to their pair, group events
    add 1/k to each participant pair.  ``'harmonic'``: direct messages are
    kept directed (sender -> recipient), group contributions feed both
    directions, and per-pair directed totals are symmetrized with the
    harmonic mean (one-sided pairs dropped).
    """
    if weighting not in ("sum", "harmonic"):
        raise ValueError(f"unknown weighting {weighting!r}")

    if weighting == "sum":
        contrib: dict[tuple[int, int], list[float]] = {}
        for ev in events:
            if ev.kind == DIRECT:
                a = index.intern(ev.sender)
                b = index.intern(ev.recipients[0])
                key = (a, b) if a < b else (b, a)
                contrib.setdefault(key, []).append(1.0)
            else:
                if ev.group_size < 2:
                    raise DataError("group event with fewer than 2 participants")
                share = _group_share(ev)
                part = sorted({index.intern(p) for p in ev.participants()})
                for ai in range(len(part)):
                    for bi in range(ai + 1, len(part)):
                        contrib.setdefault((part[ai], part[bi]), []).append(share)
        pair_weights = {key: math.fsum(vals) for key, vals in contrib.items()}
    else:
        directed: dict[tuple[int, int], list[float]] = {}
        for ev in events:
            if ev.kind == DIRECT:
                a = index.intern(ev.sender)
                b = index.intern(ev.recipients[0])
                directed.setdefault((a, b), []).append(1.0)
            else:
                if ev.group_size < 2:
                    raise DataError("group event with fewer than 2 participants")
                share = _group_share(ev)
                part = sorted({index.intern(p) for p in ev.participants()})
                for ai in range(len(part)):
                    for bi in range(ai + 1, len(part)):
                        directed.setdefault((part[ai], part[bi]), []).append(share)
                        directed.setdefault((part[bi], part[ai]), []).append(share)
        totals = {key: math.fsum(vals) for key, vals in directed.items()}
        pair_weights = harmonic_symmetrize(totals)

    if pair_weights:
        keys = sorted(pair_weights)
        u = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
        v = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
        w = np.fromiter((pair_weights[k] for k in keys), dtype=np.float64, count=len(keys))
    else:
        u = v = np.empty(0, dtype=np.int64)
        w = np.empty(0, dtype=np.float64)
    return WeeklyGraph.from_pair_arrays(week, index, u, v, w, n_universe=len(index))


def harmonic_symmetrize(
    directed: dict[tuple[int, int], float]
) -> dict[tuple[int, int], float]:
    """Directed totals -> symmetric harmonic-mean weights.

    The pair survives only when both directions carry positive weight:
    w = 2ab / (a + b).
    """
    out: dict[tuple[int, int], float] = {}
    for (i, j), a in directed.items():
        if i >= j:
            continue
        b = directed.get((j, i), 0.0)
        if a > 0.0 and b > 0.0:
            out[(i, j)] = 2.0 * a * b / (a + b)
    return out


def write_weekly_graph(graph: WeeklyGraph, stream: TextIO) -> None:
    """Edge-list serialization: ``week,src,dst,weight`` with 9 significant digits."""
    stream.write("week,src,dst,weight\n")
    for a, b, w in graph.edge_list():
        stream.write(f"{graph.week},{a},{b},{w:.9g}\n")


def read_weekly_graph(stream: TextIO, index: NodeIndex) -> WeeklyGraph:
    header = stream.readline().strip()
    if header != "week,src,dst,weight":
        raise DataError(f"unexpected graph header {header!r}")
    week = None
    pairs: dict[tuple[int, int], float] = {}
    for lineno, line in enumerate(stream, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"graph line {lineno}: expected 4 fields")
        w_idx, a, b, wt = int(parts[0]), parts[1], parts[2], float(parts[3])
        if week is None:
            week = w_idx
        elif w_idx != week:
            raise DataError(f"graph line {lineno}: mixed week indices")
        ia, ib = index.intern(a), index.intern(b)
        key = (ia, ib) if ia < ib else (ib, ia)
        pairs[key] = wt
    if week is None:
        week = 0
    keys = sorted(pairs)
    u = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    v = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    w = np.fromiter((pairs[k] for k in keys), dtype=np.float64, count=len(keys))
    return WeeklyGraph.from_pair_arrays(week, index, u, v, w, n_universe=len(index))
