"""Matched control selection.

Each departing employee is matched at their departure week to employees
who stayed: features are averaged over the socialization window, z-scored
within the anchor-week pool, and the 20 nearest candidates by Euclidean
distance form the shortlist from which 3 controls are sampled.

Hard exclusions: the departing ego itself, every employee that departs at
any point, the ego's window neighbors (its socialization-set members), and
anyone already used as a control within the previous four weeks (the
reuse ledger, |delta week| <= 4 including the same week).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np

from .cohort import SocializationSet, WindowConfig
from .errors import DataError
from .graphs import WeeklyGraph
from .metrics import WeekStats

FEATURE_NAMES = ("connections", "volume", "clustering", "is_manager")


@dataclass(frozen=True)
class MatchConfig:
    k_neighbors: int = 20
    n_controls: int = 3
    reuse_gap: int = 4
    seed: int = 0


@dataclass(frozen=True)
class Match:
    ego: str
    t_star: int
    control: str
    distance: float


class ExclusionLedger:
    """Tracks (control, week) assignments to block reuse within the gap."""

    def __init__(self, gap: int):
        self.gap = gap
        self._used: dict[str, list[int]] = {}

    def available(self, ident: str, week: int) -> bool:
        return all(abs(week - w) > self.gap for w in self._used.get(ident, ()))

    def record(self, ident: str, week: int) -> None:
        self._used.setdefault(ident, []).append(week)

    def violations(self, matches: Iterable[Match]) -> int:
        """Pairs of assignments of one control closer than the gap."""
        by_control: dict[str, list[int]] = {}
        for m in matches:
            by_control.setdefault(m.control, []).append(m.t_star)
        bad = 0
        for weeks in by_control.values():
            weeks.sort()
            for a in range(len(weeks)):
                for b in range(a + 1, len(weeks)):
                    if abs(weeks[a] - weeks[b]) <= self.gap:
                        bad += 1
        return bad


def _anchor_rng(seed: int, ego: str, t_star: int) -> np.random.Generator:
    # stable per-anchor stream independent of processing order
    digest = hashlib.sha256(f"{ego}@{t_star}".encode()).digest()
    tag = int.from_bytes(digest[:8], "big")
    return np.random.default_rng(np.random.SeedSequence([seed, tag, t_star & 0x7FFFFFFF]))


def window_feature_arrays(
    graphs: Mapping[int, WeeklyGraph],
    t_star: int,
    window: WindowConfig,
    stats_cache: dict[int, WeekStats] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-employee (connections, volume, clustering) averaged over window
    weeks in which the employee was active, plus the active-week counts.

    Employees inactive throughout the window get zeros.
    """
    n = len(next(iter(graphs.values())).index)
    sums = np.zeros((n, 3))
    counts = np.zeros(n)
    for week in window.window(t_star):
        g = graphs.get(week)
        if g is None:
            continue
        if stats_cache is not None:
            st = stats_cache.get(week)
            if st is None:
                st = stats_cache[week] = WeekStats(g)
        else:
            st = WeekStats(g)
        m = g.n_universe
        deg = st.deg
        active = deg > 0
        sums[:m, 0][active] += deg[active]
        sums[:m, 1][active] += st.strength[active]
        sums[:m, 2][active] += st.clustering[active]
        counts[:m] += active
    feats = np.zeros((n, 3))
    seen = counts > 0
    feats[seen] = sums[seen] / counts[seen, None]
    return feats, counts


def zscore_pool(x: np.ndarray) -> np.ndarray:
    """Column z-scores over the pool; constant columns become zero."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    out = np.zeros_like(x, dtype=np.float64)
    ok = sd > 0
    out[:, ok] = (x[:, ok] - mu[ok]) / sd[ok]
    return out


def _is_manager_array(index, attributes: Mapping[str, Mapping[str, float]] | None) -> np.ndarray:
    flags = np.zeros(len(index))
    if attributes:
        for ident, attrs in attributes.items():
            pos = index.get(ident)
            if pos is not None:
                flags[pos] = float(attrs.get("is_manager", 0.0))
    return flags


def _anchor_graph(graphs: Mapping[int, WeeklyGraph], t_star: int) -> WeeklyGraph | None:
    g = graphs.get(t_star)
    if g is not None:
        return g
    prior = [w for w in graphs if w <= t_star]
    return graphs[max(prior)] if prior else None


def find_matches(
    graphs: Mapping[int, WeeklyGraph],
    treated_sets: Sequence[SocializationSet],
    departing: set[str],
    cfg: MatchConfig = MatchConfig(),
    window: WindowConfig = WindowConfig(),
    attributes: Mapping[str, Mapping[str, float]] | None = None,
) -> tuple[list[Match], dict]:
    """Controls for each treated set, with diagnostics.

    Anchors are processed in (t_star, ego) order so the reuse ledger is
    deterministic; per-anchor sampling streams are derived from the run
    seed and the anchor identity, never from processing order.
    """
    if not graphs:
        return [], {"anchors": 0, "matched": 0, "dropped_small_pool": 0}
    index = next(iter(graphs.values())).index
    manager = _is_manager_array(index, attributes)
    ledger = ExclusionLedger(cfg.reuse_gap)
    stats_cache: dict[int, WeekStats] = {}
    feature_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    anchors = sorted(treated_sets, key=lambda s: (s.t_star, s.ego))
    matches: list[Match] = []
    dropped = 0

    for sset in anchors:
        t_star = sset.t_star
        feats = feature_cache.get(t_star)
        if feats is None:
            feats = feature_cache[t_star] = window_feature_arrays(
                graphs, t_star, window, stats_cache
            )
        base, _counts = feats

        anchor_g = _anchor_graph(graphs, t_star)
        if anchor_g is None:
            dropped += 1
            continue
        active_now = np.zeros(len(index), dtype=bool)
        act_idx = anchor_g.active_indices()
        active_now[act_idx] = True

        ego_idx = index.get(sset.ego)
        eligible = active_now.copy()
        if ego_idx is not None:
            eligible[ego_idx] = False
        for m in sset.members:
            pos = index.get(m)
            if pos is not None:
                eligible[pos] = False
        for d in departing:
            pos = index.get(d)
            if pos is not None:
                eligible[pos] = False
        cand_idx = np.flatnonzero(eligible)
        cand_ids = np.array(index.idents(cand_idx), dtype=object)
        ok = np.fromiter(
            (ledger.available(c, t_star) for c in cand_ids), dtype=bool, count=len(cand_ids)
        )
        cand_idx, cand_ids = cand_idx[ok], cand_ids[ok]

        if len(cand_idx) < cfg.n_controls or ego_idx is None:
            dropped += 1
            continue

        # pool = candidates plus the ego; z-scoring params come from this pool
        pool_idx = np.concatenate([[ego_idx], cand_idx])
        raw = np.column_stack([base[pool_idx], manager[pool_idx]])
        z = zscore_pool(raw)
        dist = np.sqrt(((z[1:] - z[0]) ** 2).sum(axis=1))

        order = np.lexsort((cand_ids.astype(str), dist))
        top = order[: cfg.k_neighbors]
        rng = _anchor_rng(cfg.seed, sset.ego, t_star)
        pick = rng.choice(len(top), size=cfg.n_controls, replace=False)
        pick.sort()
        for p in pick:
            j = top[p]
            control = str(cand_ids[j])
            matches.append(
                Match(ego=sset.ego, t_star=t_star, control=control, distance=float(dist[j]))
            )
            ledger.record(control, t_star)

    diag = match_diagnostics(matches, ledger, treated_sets, dropped)
    return matches, diag


def match_diagnostics(
    matches: Sequence[Match],
    ledger: ExclusionLedger,
    treated_sets: Sequence[SocializationSet],
    dropped: int,
) -> dict:
    members_by_anchor = {(s.ego, s.t_star): set(s.members) for s in treated_sets}
    neighbor_hits = sum(
        1 for m in matches if m.control in members_by_anchor.get((m.ego, m.t_star), ())
    )
    self_hits = sum(1 for m in matches if m.control == m.ego)
    dists = np.array([m.distance for m in matches]) if matches else np.zeros(0)
    return {
        "anchors": len(treated_sets),
        "matched": len({(m.ego, m.t_star) for m in matches}),
        "dropped_small_pool": dropped,
        "n_controls": len(matches),
        "ledger_violations": ledger.violations(matches),
        "neighbor_as_control": neighbor_hits,
        "self_as_control": self_hits,
        "mean_distance": float(dists.mean()) if len(dists) else 0.0,
        "max_distance": float(dists.max()) if len(dists) else 0.0,
    }


def control_sets(
    graphs: Mapping[int, WeeklyGraph],
    matches: Sequence[Match],
    window: WindowConfig = WindowConfig(),
) -> tuple[list[SocializationSet], int]:
    """Control socialization sets at the anchor week; empties are dropped."""
    from .cohort import build_socialization_set

    out: list[SocializationSet] = []
    dropped = 0
    for m in matches:
        ss = build_socialization_set(graphs, m.control, m.t_star, window, treated=False)
        if ss is None:
            dropped += 1
        else:
            out.append(ss)
    return out, dropped


def write_matches(matches: Iterable[Match], stream: TextIO) -> None:
    stream.write("ego,t_star,control,distance\n")
    for m in matches:
        stream.write(f"{m.ego},{m.t_star},{m.control},{m.distance:.9g}\n")


def read_matches(stream: TextIO) -> list[Match]:
    header = stream.readline().strip()
    if header != "ego,t_star,control,distance":
        raise DataError(f"unexpected matches header {header!r}")
    out = []
    for lineno, line in enumerate(stream, start=2):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DataError(f"matches line {lineno}: expected 4 fields")
        out.append(
            Match(ego=parts[0], t_star=int(parts[1]), control=parts[2], distance=float(parts[3]))
        )
    return out
