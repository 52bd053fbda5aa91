"""Departure detection and socialization sets.

A departure week t* is the first week of a terminal silence: the employee
is active at t* - 1 and never again through the horizon, with at least
``lookahead`` weeks of observed silence.  The departing employee's
socialization set is everyone they interacted with during the window
[t* - buffer - freeze, t* - buffer], ego excluded.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, TextIO

import numpy as np

from .errors import DataError
from .graphs import DenseGraph, NodeIndex, WeeklyGraph

DEFAULT_BUFFER = 6
DEFAULT_FREEZE = 4
DEFAULT_LOOKAHEAD = 12


@dataclass(frozen=True)
class WindowConfig:
    """Socialization-window geometry relative to the departure week."""

    buffer: int = DEFAULT_BUFFER
    freeze: int = DEFAULT_FREEZE

    def window(self, t_star: int) -> range:
        # inclusive on both ends
        return range(t_star - self.buffer - self.freeze, t_star - self.buffer + 1)


@dataclass(frozen=True)
class Departure:
    employee: str
    t_star: int


@dataclass(frozen=True)
class SocializationSet:
    """An ego (departing or matched control), its anchor week, and members."""

    ego: str
    t_star: int
    treated: bool
    members: tuple[str, ...]

    def __post_init__(self):
        if self.ego in self.members:
            raise DataError(f"ego {self.ego!r} listed among members")
        if tuple(sorted(self.members)) != self.members:
            object.__setattr__(self, "members", tuple(sorted(self.members)))

    @property
    def set_id(self) -> str:
        tag = "t" if self.treated else "c"
        return f"{tag}:{self.ego}@{self.t_star}"


def detect_departures(
    graphs: Mapping[int, WeeklyGraph],
    horizon: int,
    lookahead: int = DEFAULT_LOOKAHEAD,
) -> list[Departure]:
    """Employees whose last activity is followed by >= lookahead silent weeks.

    t* = last active week + 1.  Employees still active near the horizon
    (horizon - t* < lookahead) are censored, not departures.
    """
    if not graphs:
        return []
    index = next(iter(graphs.values())).index
    last_active = np.full(len(index), -1, dtype=np.int64)
    for week in sorted(graphs):
        if week > horizon:
            continue
        act = graphs[week].active_indices()
        last_active[act] = week
    out = []
    for i in np.flatnonzero(last_active >= 0):
        t_star = int(last_active[i]) + 1
        if horizon - t_star >= lookahead:
            out.append(Departure(employee=index.ident(int(i)), t_star=t_star))
    out.sort(key=lambda d: (d.t_star, d.employee))
    return out


def build_socialization_set(
    graphs: Mapping[int, WeeklyGraph],
    ego: str,
    t_star: int,
    cfg: WindowConfig = WindowConfig(),
    treated: bool = True,
) -> SocializationSet | None:
    """Union of the ego's weekly neighbors over the window; None when empty."""
    members: set[str] = set()
    for week in cfg.window(t_star):
        g = graphs.get(week)
        if g is not None:
            members |= g.neighbors(ego)
    members.discard(ego)
    if not members:
        return None
    return SocializationSet(
        ego=ego, t_star=t_star, treated=treated, members=tuple(sorted(members))
    )


def build_cohort(
    graphs: Mapping[int, WeeklyGraph],
    departures: Iterable[Departure],
    cfg: WindowConfig = WindowConfig(),
) -> tuple[list[SocializationSet], int]:
    """Socialization sets for all departures, plus the dropped-empty count."""
    sets: list[SocializationSet] = []
    dropped = 0
    for dep in departures:
        ss = build_socialization_set(graphs, dep.employee, dep.t_star, cfg)
        if ss is None:
            dropped += 1
        else:
            sets.append(ss)
    return sets, dropped


def member_indices(sset: SocializationSet, index: NodeIndex) -> np.ndarray:
    return np.fromiter(
        (index.intern(m) for m in sset.members), dtype=np.int64, count=len(sset.members)
    )


def group_subgraph(
    graph: WeeklyGraph, sset: SocializationSet, members_idx: np.ndarray | None = None
) -> DenseGraph:
    """Induced subgraph on members active that week (in the full graph).

    Nodes are membership-and-activity based, so a member with no
    within-group edges that week is an isolated node here.
    """
    if members_idx is None:
        members_idx = member_indices(sset, graph.index)
    active = members_idx[graph.active_mask(members_idx)]
    return DenseGraph(ids=active, w=graph.induced_dense(active))


def ego_network(graph: WeeklyGraph, ego: str) -> DenseGraph:
    """Ego plus alters with all edges among them; ego at position 0."""
    i = graph.index.get(ego)
    if i is None or i >= graph.n_universe:
        return DenseGraph(ids=np.empty(0, dtype=np.int64), w=np.zeros((0, 0)))
    alters = graph.neighbor_idx(i)
    if len(alters) == 0:
        return DenseGraph(ids=np.empty(0, dtype=np.int64), w=np.zeros((0, 0)))
    ids = np.concatenate([[i], alters]).astype(np.int64)
    return DenseGraph(ids=ids, w=graph.induced_dense(ids))


def write_sets(sets: Iterable[SocializationSet], stream: TextIO) -> None:
    """One row per (set, member): ``ego,t_star,treated,member``."""
    stream.write("ego,t_star,treated,member\n")
    for ss in sets:
        flag = 1 if ss.treated else 0
        for m in ss.members:
            stream.write(f"{ss.ego},{ss.t_star},{flag},{m}\n")


def read_sets(stream: TextIO) -> list[SocializationSet]:
    header = stream.readline().strip()
    if header != "ego,t_star,treated,member":
        raise DataError(f"unexpected sets header {header!r}")
    acc: dict[tuple[str, int, bool], list[str]] = {}
    order: list[tuple[str, int, bool]] = []
    for lineno, line in enumerate(stream, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"sets line {lineno}: expected 4 fields")
        ego, t_star, flag, member = parts[0], int(parts[1]), parts[2], parts[3]
        if flag not in ("0", "1"):
            raise DataError(f"sets line {lineno}: treated flag must be 0 or 1")
        key = (ego, t_star, flag == "1")
        if key not in acc:
            acc[key] = []
            order.append(key)
        acc[key].append(member)
    return [
        SocializationSet(ego=k[0], t_star=k[1], treated=k[2], members=tuple(sorted(acc[k])))
        for k in order
    ]
