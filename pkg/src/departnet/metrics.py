"""Weekly network metrics.

Two perspectives on each socialization set and week:

* group metrics on the induced subgraph of members active that week
  (isolated members are nodes with no edges);
* individual metrics of each member in the full weekly graph, averaged
  over members active that week.

An empty induced graph yields zeros for group metrics (n_active = 0) and
missing values for the individual averages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.sparse import csgraph, csr_matrix

from .cohort import SocializationSet, member_indices
from .errors import DataError
from .graphs import DenseGraph, WeeklyGraph

GROUP_METRICS = (
    "closeness",
    "closure",
    "components",
    "largest_component_share",
    "connections",
    "volume",
    "n_active",
)
INDIVIDUAL_METRICS = (
    "clustering_ind",
    "connections_ind",
    "volume_ind",
    "diversity_ind",
)
ALL_METRICS = GROUP_METRICS + INDIVIDUAL_METRICS

DEFAULT_T_RANGE = (-16, 16)

SERIES_COLUMNS = ("set_id", "ego", "t_star", "treated", "t", "week", "metric", "value")


def local_clustering_dense(adj: np.ndarray) -> np.ndarray:
    """Per-node clustering coefficient from a boolean adjacency matrix."""
    a = adj.astype(np.float64)
    deg = a.sum(axis=1)
    tri = np.einsum("ij,jk,ki->i", a, a, a) / 2.0
    denom = deg * (deg - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(denom > 0, 2.0 * tri / denom, 0.0)
    return c


# scipy's sparse machinery costs ~1 ms per graph in construction and
# validation alone, which dominates when sets have a dozen members; below
# this size the dense BFS helpers are used instead
_DENSE_CUTOFF = 128


def _components_dense(adj: np.ndarray) -> tuple[int, np.ndarray]:
    """Connected component count and labels via frontier expansion."""
    n = adj.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    ncomp = 0
    for seed in range(n):
        if labels[seed] >= 0:
            continue
        comp = np.zeros(n, dtype=bool)
        comp[seed] = True
        frontier = adj[seed].copy()
        frontier[seed] = False
        while frontier.any():
            comp |= frontier
            frontier = adj[frontier].any(axis=0) & ~comp
        labels[comp] = ncomp
        ncomp += 1
    return ncomp, labels


def _inverse_hops_dense(adj: np.ndarray) -> float:
    """Sum of 1/hops over ordered reachable pairs (diagonal excluded)."""
    a = adj.astype(np.float64)
    reach = adj.copy()
    np.fill_diagonal(reach, True)
    total = float(adj.sum())  # distance-1 pairs
    hop = 1
    while True:
        grown = (a @ reach) > 0
        np.fill_diagonal(grown, True)
        new = grown & ~reach
        if not new.any():
            return total
        hop += 1
        total += float(new.sum()) / hop
        reach = grown


def group_metrics(g: DenseGraph) -> dict[str, float]:
    """All seven group metrics of one induced subgraph."""
    n = g.n
    out = {m: 0.0 for m in GROUP_METRICS}
    out["n_active"] = float(n)
    if n == 0:
        return out
    adj = g.adjacency_bool()

    if n <= _DENSE_CUTOFF:
        ncomp, labels = _components_dense(adj)
        inv_sum = _inverse_hops_dense(adj)
    else:
        a_sparse = csr_matrix(adj)
        ncomp, labels = csgraph.connected_components(a_sparse, directed=False)
        dist = csgraph.shortest_path(a_sparse, method="D", directed=False, unweighted=True)
        with np.errstate(divide="ignore"):
            inv = 1.0 / dist
        inv[~np.isfinite(inv)] = 0.0
        np.fill_diagonal(inv, 0.0)
        inv_sum = float(inv.sum())

    out["components"] = float(ncomp)
    out["largest_component_share"] = float(np.bincount(labels).max()) / n
    out["connections"] = g.n_edges() / n
    out["volume"] = g.total_weight() / n
    out["closure"] = float(local_clustering_dense(adj).mean())
    if n >= 2:
        out["closeness"] = inv_sum / (n * (n - 1))
    return out


@dataclass
class WeekStats:
    """Lazily computed per-node statistics of one weekly graph.

    Degree, strength, and clustering are bulk sparse operations; ego-network
    diversity (components among a node's alters) is computed per node on
    demand and cached, since only set members ever need it.
    """

    graph: WeeklyGraph
    _deg: np.ndarray | None = field(default=None, repr=False)
    _strength: np.ndarray | None = field(default=None, repr=False)
    _clustering: np.ndarray | None = field(default=None, repr=False)
    _diversity: dict[int, int] = field(default_factory=dict, repr=False)
    _stamp: np.ndarray | None = field(default=None, repr=False)
    _stampval: int = 0

    @property
    def deg(self) -> np.ndarray:
        if self._deg is None:
            self._deg = self.graph.degree_array()
        return self._deg

    @property
    def strength(self) -> np.ndarray:
        if self._strength is None:
            self._strength = self.graph.strength_array()
        return self._strength

    @property
    def clustering(self) -> np.ndarray:
        if self._clustering is None:
            a = self.graph.adj.copy()
            a.data = np.ones_like(a.data)
            tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
            denom = self.deg * (self.deg - 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                self._clustering = np.where(denom > 0, 2.0 * tri / denom, 0.0)
        return self._clustering

    def diversity(self, i: int) -> int:
        cached = self._diversity.get(i)
        if cached is not None:
            return cached
        g = self.graph
        if i >= g.n_universe:
            self._diversity[i] = 0
            return 0
        alters = g.neighbor_idx(i)
        d = len(alters)
        if d == 0:
            self._diversity[i] = 0
            return 0
        if self._stamp is None:
            self._stamp = np.zeros(g.n_universe, dtype=np.int64)
        self._stampval += 1
        self._stamp[alters] = self._stampval
        parent = list(range(d))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        merges = 0
        # CSR column indices are sorted, so positions come from searchsorted
        for k in range(d):
            nb = g.neighbor_idx(alters[k])
            hits = nb[self._stamp[nb] == self._stampval]
            for pos in np.searchsorted(alters, hits):
                ra, rb = find(k), find(int(pos))
                if ra != rb:
                    parent[ra] = rb
                    merges += 1
        val = d - merges
        self._diversity[i] = val
        return val


def individual_metrics(graph: WeeklyGraph, ident: str) -> dict[str, float]:
    """One employee's four metrics in the full weekly graph."""
    stats = WeekStats(graph)
    i = graph.index.get(ident)
    if i is None or i >= graph.n_universe:
        return {m: 0.0 for m in INDIVIDUAL_METRICS}
    return {
        "clustering_ind": float(stats.clustering[i]),
        "connections_ind": float(stats.deg[i]),
        "volume_ind": float(stats.strength[i]),
        "diversity_ind": float(stats.diversity(i)),
    }


def aggregate_individual(stats: WeekStats, members_idx: np.ndarray) -> dict[str, float]:
    """Individual metrics averaged over members active that week; NaN if none."""
    active = members_idx[stats.graph.active_mask(members_idx)]
    if len(active) == 0:
        return {m: float("nan") for m in INDIVIDUAL_METRICS}
    div = np.fromiter((stats.diversity(int(i)) for i in active), dtype=np.float64, count=len(active))
    return {
        "clustering_ind": float(stats.clustering[active].mean()),
        "connections_ind": float(stats.deg[active].mean()),
        "volume_ind": float(stats.strength[active].mean()),
        "diversity_ind": float(div.mean()),
    }


def set_week_metrics(
    graph: WeeklyGraph,
    sset: SocializationSet,
    stats: WeekStats | None = None,
    members_idx: np.ndarray | None = None,
    metrics: Sequence[str] | None = None,
) -> dict[str, float]:
    """All requested metrics for one set in one week."""
    if members_idx is None:
        members_idx = member_indices(sset, graph.index)
    wanted = tuple(metrics) if metrics is not None else ALL_METRICS
    out: dict[str, float] = {}
    if any(m in GROUP_METRICS for m in wanted):
        active = members_idx[graph.active_mask(members_idx)]
        gm = group_metrics(DenseGraph(ids=active, w=graph.induced_dense(active)))
        out.update({m: gm[m] for m in wanted if m in GROUP_METRICS})
    if any(m in INDIVIDUAL_METRICS for m in wanted):
        if stats is None:
            stats = WeekStats(graph)
        im = aggregate_individual(stats, members_idx)
        out.update({m: im[m] for m in wanted if m in INDIVIDUAL_METRICS})
    return out


def build_metric_series(
    graphs: Mapping[int, WeeklyGraph],
    sets: Iterable[SocializationSet],
    t_range: tuple[int, int] = DEFAULT_T_RANGE,
    metrics: Sequence[str] | None = None,
) -> pd.DataFrame:
    """Tidy per-(set, week, metric) table over relative weeks in ``t_range``.

    Weeks outside the observed graphs produce no rows.  Set membership is
    interned against the shared node index once per set.
    """
    wanted = tuple(metrics) if metrics is not None else ALL_METRICS
    unknown = set(wanted) - set(ALL_METRICS)
    if unknown:
        raise DataError(f"unknown metrics: {sorted(unknown)}")
    stats_cache: dict[int, WeekStats] = {}
    need_ind = any(m in INDIVIDUAL_METRICS for m in wanted)

    rows_set: list[str] = []
    rows_ego: list[str] = []
    rows_tstar: list[int] = []
    rows_treated: list[bool] = []
    rows_t: list[int] = []
    rows_week: list[int] = []
    rows_metric: list[str] = []
    rows_value: list[float] = []

    index = next(iter(graphs.values())).index if graphs else None
    for sset in sets:
        members_idx = member_indices(sset, index) if index is not None else None
        for t in range(t_range[0], t_range[1] + 1):
            week = sset.t_star + t
            graph = graphs.get(week)
            if graph is None:
                continue
            stats = None
            if need_ind:
                stats = stats_cache.get(week)
                if stats is None:
                    stats = stats_cache[week] = WeekStats(graph)
            vals = set_week_metrics(graph, sset, stats=stats, members_idx=members_idx, metrics=wanted)
            for m in wanted:
                rows_set.append(sset.set_id)
                rows_ego.append(sset.ego)
                rows_tstar.append(sset.t_star)
                rows_treated.append(sset.treated)
                rows_t.append(t)
                rows_week.append(week)
                rows_metric.append(m)
                rows_value.append(vals[m])

    return pd.DataFrame(
        {
            "set_id": rows_set,
            "ego": rows_ego,
            "t_star": rows_tstar,
            "treated": rows_treated,
            "t": rows_t,
            "week": rows_week,
            "metric": rows_metric,
            "value": rows_value,
        }
    )
