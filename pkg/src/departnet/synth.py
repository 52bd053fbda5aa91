"""Synthetic organization generator and ground-truth oracle.

Employees sit in fixed teams.  Direct messages arrive as independent
Poisson counts per pair-week (dense within teams, sparse across), and
each team holds a Poisson number of meetings per week with uniformly
sized, randomly drawn participant lists.

Departures are scheduled: the ego goes silent from its departure week
t*, with one guaranteed event in week t* - 1 so detection lands exactly
on t*.  Post-departure effects apply to the ego's team:

* ``volume_factor`` scales teammate pair rates and the team meeting rate;
* ``fragmentation_factor`` scales rates across a fixed bipartition of the
  teammates and confines that share of meetings to one half;
* ``member_activity_factor`` scales every remaining message rate of each
  teammate (per endpoint, so a pair of teammates gets it twice).

With a stress window, departures at or after ``stress_start`` have each
factor's deviation from 1 scaled by ``stress_scale``.

Counts are drawn once per seed; graphs can be built directly from the
counts or from a materialized event log, and both routes yield the same
weekly weights (meeting shares accumulate in integer units of
1/lcm(1..20), so the direct route rounds each weight exactly once).

``oracle_expected_did`` replays the generator across replicates and takes
the treated-minus-control difference of each group metric's change
between the evaluation weeks t* - 8 and t* + 8, using randomly drawn
non-departing egos as controls, with no matching or model.  The result is
a percentile band for the expected value DiD.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .cohort import DEFAULT_LOOKAHEAD, WindowConfig, build_socialization_set
from .errors import DataError
from .events import DIRECT, GROUP, CalendarConfig, EventRecord
from .graphs import DenseGraph, NodeIndex, WeeklyGraph
from .metrics import GROUP_METRICS, group_metrics
from .panel import transform_target

# lcm(1..20): every meeting share 1/k is a whole number of these units
UNIT = 232792560

ORACLE_T_AVG = 8


@dataclass(frozen=True)
class SimConfig:
    n_employees: int = 200
    team_size: int = 8
    n_weeks: int = 60
    seed: int = 0
    rate_within: float = 0.5
    rate_cross: float = 0.002
    meeting_rate: float = 1.0
    meeting_size: tuple[int, int] = (3, 8)
    n_departures: int = 10
    departure_window: tuple[int, int] | None = None
    volume_factor: float = 1.0
    fragmentation_factor: float = 1.0
    member_activity_factor: float = 1.0
    stress_start: int | None = None
    stress_scale: float = 1.0
    manager_frac: float = 0.15
    lookahead: int = DEFAULT_LOOKAHEAD

    def validate(self) -> None:
        if self.n_employees < 2 * self.team_size:
            raise DataError("need at least two teams")
        if self.team_size < 3:
            raise DataError("team_size must be at least 3")
        if self.meeting_size[0] < 2:
            raise DataError("meetings need at least 2 participants")
        lo, hi = self.resolved_window()
        if lo > hi:
            raise DataError(f"empty departure window ({lo}, {hi})")
        if self.n_departures > self.n_employees // self.team_size:
            raise DataError("more departures than teams (one per team)")
        # cross-team effects are applied by thinning, which cannot amplify
        for stressed in (False, True):
            if _effective(self.member_activity_factor, stressed, self.stress_scale) > 1.0:
                raise DataError("member_activity_factor above 1 is not supported")

    def resolved_window(self) -> tuple[int, int]:
        if self.departure_window is not None:
            return self.departure_window
        return (12, self.n_weeks - 1 - self.lookahead)


@dataclass(frozen=True)
class ScheduledDeparture:
    ego: str
    ego_idx: int
    t_star: int
    team: int


@dataclass
class SimTruth:
    cfg: SimConfig
    departures: list[ScheduledDeparture]
    teams: dict[str, int]
    attributes: dict[str, dict[str, float]]


@dataclass
class _World:
    """Drawn counts for one seed, shared by both generation routes."""

    cfg: SimConfig
    index: NodeIndex
    truth: SimTruth
    # per week: ordered directed DM counts (src, dst, count)
    dm: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]
    # per week: participant index arrays, one per meeting
    meetings: dict[int, list[np.ndarray]]


def _effective(f: float, stressed: bool, scale: float) -> float:
    return 1.0 + scale * (f - 1.0) if stressed else f


def _employee_ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"e{i:0{width}d}" for i in range(n)]


def _draw_world(cfg: SimConfig) -> _World:
    cfg.validate()
    n = cfg.n_employees
    W = cfg.n_weeks
    n_teams = n // cfg.team_size
    team_of = np.minimum(np.arange(n) // cfg.team_size, n_teams - 1)
    members = [np.flatnonzero(team_of == t) for t in range(n_teams)]
    ids = _employee_ids(n)
    index = NodeIndex(ids)

    rng_struct = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    is_manager = rng_struct.random(n) < cfg.manager_frac
    tenure = np.round(rng_struct.uniform(0.0, 10.0, size=n), 2)
    attributes = {
        ids[i]: {"is_manager": float(is_manager[i]), "tenure": float(tenure[i])}
        for i in range(n)
    }

    lo, hi = cfg.resolved_window()
    dep_teams = rng_struct.choice(n_teams, size=cfg.n_departures, replace=False)
    # departure weeks sit on an even stride across the window: with a wide
    # enough window no departure falls inside another set's observation
    # span, so the sets never share a disruption
    k = cfg.n_departures
    if k == 1:
        slots = [(lo + hi) // 2]
    else:
        slots = [lo + round(i * (hi - lo) / (k - 1)) for i in range(k)]
    scheduled: list[ScheduledDeparture] = []
    for slot, team in zip(slots, sorted(int(t) for t in dep_teams)):
        mem = members[team]
        ego = int(mem[rng_struct.integers(len(mem))])
        scheduled.append(
            ScheduledDeparture(ego=ids[ego], ego_idx=ego, t_star=int(slot), team=team)
        )
    scheduled.sort(key=lambda d: (d.t_star, d.ego))
    truth = SimTruth(
        cfg=cfg,
        departures=scheduled,
        teams={ids[i]: int(team_of[i]) for i in range(n)},
        attributes=attributes,
    )

    # per employee-week multipliers: alive (ego silence) and activity scaling
    alive = np.ones((W, n))
    act = np.ones((W, n))
    for dep in scheduled:
        stressed = cfg.stress_start is not None and dep.t_star >= cfg.stress_start
        f_m = _effective(cfg.member_activity_factor, stressed, cfg.stress_scale)
        alive[dep.t_star :, dep.ego_idx] = 0.0
        mates = members[dep.team][members[dep.team] != dep.ego_idx]
        if f_m != 1.0:
            act[dep.t_star :, mates] *= f_m

    # enumerate within-team pairs once, contiguously per team
    pu, pv = [], []
    team_pair_slices: list[tuple[int, int]] = []
    for t in range(n_teams):
        start = len(pu)
        mem = members[t]
        for a in range(len(mem)):
            for b in range(a + 1, len(mem)):
                pu.append(mem[a])
                pv.append(mem[b])
        team_pair_slices.append((start, len(pu)))
    pu = np.array(pu, dtype=np.int64)
    pv = np.array(pv, dtype=np.int64)

    rates = np.full((W, len(pu)), cfg.rate_within)
    rates *= alive[:, pu] * alive[:, pv] * act[:, pu] * act[:, pv]
    meet_rates = np.full((W, n_teams), cfg.meeting_rate)

    halves: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    confine: dict[int, tuple[int, float]] = {}  # team -> (t_star, 1 - f_f)
    for dep in scheduled:
        stressed = cfg.stress_start is not None and dep.t_star >= cfg.stress_start
        f_v = _effective(cfg.volume_factor, stressed, cfg.stress_scale)
        f_f = _effective(cfg.fragmentation_factor, stressed, cfg.stress_scale)
        start, end = team_pair_slices[dep.team]
        u_loc, v_loc = pu[start:end], pv[start:end]
        non_ego = (u_loc != dep.ego_idx) & (v_loc != dep.ego_idx)
        if f_v != 1.0:
            rates[dep.t_star :, start:end][:, non_ego] *= f_v
            meet_rates[dep.t_star :, dep.team] *= f_v
        mates = members[dep.team][members[dep.team] != dep.ego_idx]
        first = mates[: (len(mates) + 1) // 2]
        second = mates[(len(mates) + 1) // 2 :]
        halves[dep.team] = (first, second)
        if f_f != 1.0:
            in_first = np.isin(u_loc, first) != np.isin(v_loc, first)
            cross_half = non_ego & in_first
            rates[dep.t_star :, start:end][:, cross_half] *= f_f
            confine[dep.team] = (dep.t_star, 1.0 - f_f)

    rng_within = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    within_counts = rng_within.poisson(rates)
    wk_w, p_w = np.nonzero(within_counts)
    c_w = within_counts[wk_w, p_w]
    # split each pair's count into the two directions
    a_w = rng_within.binomial(c_w, 0.5)

    dm_parts: dict[int, list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = {
        w: [] for w in range(W)
    }
    for w in range(W):
        sel = wk_w == w
        if not sel.any():
            continue
        u, v, c, a = pu[p_w[sel]], pv[p_w[sel]], c_w[sel], a_w[sel]
        b = c - a
        dm_parts[w].append((u[a > 0], v[a > 0], a[a > 0]))
        dm_parts[w].append((v[b > 0], u[b > 0], b[b > 0]))

    # cross-team messages: total Poisson volume, pairs drawn uniformly
    rng_cross = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    n_cross_pairs = n * (n - 1) // 2 - len(pu)
    lam_cross = cfg.rate_cross * n_cross_pairs
    for w in range(W):
        n_ev = int(rng_cross.poisson(lam_cross))
        if n_ev == 0:
            continue
        src = np.empty(n_ev, dtype=np.int64)
        dst = np.empty(n_ev, dtype=np.int64)
        need = np.arange(n_ev)
        while len(need):
            s = rng_cross.integers(0, n, size=len(need))
            d = rng_cross.integers(0, n, size=len(need))
            ok = team_of[s] != team_of[d]
            src[need[ok]] = s[ok]
            dst[need[ok]] = d[ok]
            need = need[~ok]
        keep_p = alive[w, src] * alive[w, dst] * act[w, src] * act[w, dst]
        keep = rng_cross.random(n_ev) < keep_p
        src, dst = src[keep], dst[keep]
        if len(src):
            key = src * n + dst
            uniq, cnt = np.unique(key, return_counts=True)
            dm_parts[w].append((uniq // n, uniq % n, cnt.astype(np.int64)))

    # meetings
    rng_meet = np.random.default_rng(np.random.SeedSequence([cfg.seed, 4]))
    meet_counts = rng_meet.poisson(meet_rates)
    lo_sz, hi_sz = cfg.meeting_size
    meetings: dict[int, list[np.ndarray]] = {w: [] for w in range(W)}
    # scheduled egos never attend meetings: the members' meeting
    # environment is then stationary across the departure, so a
    # factor-1 world is exactly null for the group metrics
    ego_of_team = {d.team: d.ego_idx for d in scheduled}
    meeting_pool = [
        members[t][members[t] != ego_of_team[t]] if t in ego_of_team else members[t]
        for t in range(n_teams)
    ]
    for w in range(W):
        for t in range(n_teams):
            k_meet = int(meet_counts[w, t])
            if k_meet == 0:
                continue
            pool = meeting_pool[t]
            for _ in range(k_meet):
                this_pool = pool
                conf = confine.get(t)
                if conf is not None and w >= conf[0]:
                    if rng_meet.random() < conf[1]:
                        first, second = halves[t]
                        this_pool = first if rng_meet.random() < 0.5 else second
                if len(this_pool) < 2:
                    continue
                size = int(rng_meet.integers(lo_sz, hi_sz + 1))
                size = min(size, len(this_pool))
                if size < 2:
                    continue
                part = this_pool[rng_meet.permutation(len(this_pool))[:size]]
                meetings[w].append(np.sort(part))

    # guarantee one event in the week before each scheduled departure
    for dep in scheduled:
        hb = dep.t_star - 1
        if hb < 0 or hb >= W:
            continue
        active = False
        for u, v, _ in dm_parts[hb]:
            if np.any(u == dep.ego_idx) or np.any(v == dep.ego_idx):
                active = True
                break
        if not active:
            for part in meetings[hb]:
                if np.any(part == dep.ego_idx):
                    active = True
                    break
        if not active:
            mates = members[dep.team][members[dep.team] != dep.ego_idx]
            one = np.array([dep.ego_idx], dtype=np.int64)
            dm_parts[hb].append((one, mates[:1].astype(np.int64), np.array([1], dtype=np.int64)))

    dm: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    for w in range(W):
        parts = dm_parts[w]
        if parts:
            src = np.concatenate([p[0] for p in parts])
            dst = np.concatenate([p[1] for p in parts])
            cnt = np.concatenate([p[2] for p in parts])
            key = src * n + dst
            uniq, inv = np.unique(key, return_inverse=True)
            tot = np.bincount(inv, weights=cnt).astype(np.int64)
            dm[w] = (uniq // n, uniq % n, tot)
        else:
            z = np.empty(0, dtype=np.int64)
            dm[w] = (z, z, z)

    return _World(cfg=cfg, index=index, truth=truth, dm=dm, meetings=meetings)


# pair index templates per meeting size; sizes are capped at 20 so this
# stays tiny, and it keeps np.triu_indices out of the per-meeting loop
_PAIR_IDX = {k: np.triu_indices(k, k=1) for k in range(2, 21)}


def _meeting_pair_units(
    meetings: list[np.ndarray], n: int
) -> tuple[np.ndarray, np.ndarray]:
    """Unordered pair keys and share units (1/k in UNIT units) for one week."""
    keys, units = [], []
    for part in meetings:
        k = len(part)
        share = UNIT // k
        iu, ju = _PAIR_IDX[k]
        keys.append(part[iu] * n + part[ju])
        units.append(np.full(len(iu), share, dtype=np.int64))
    if not keys:
        z = np.empty(0, dtype=np.int64)
        return z, z
    return np.concatenate(keys), np.concatenate(units)


def _graphs_from_world(world: _World, weighting: str) -> dict[int, WeeklyGraph]:
    n = world.cfg.n_employees
    graphs: dict[int, WeeklyGraph] = {}
    for w in range(world.cfg.n_weeks):
        src, dst, cnt = world.dm[w]
        mkeys, munits = _meeting_pair_units(world.meetings[w], n)
        if weighting == "sum":
            lo = np.minimum(src, dst)
            hi = np.maximum(src, dst)
            keys = np.concatenate([lo * n + hi, mkeys])
            units = np.concatenate([cnt * UNIT, munits])
            uniq, inv = np.unique(keys, return_inverse=True)
            tot = np.bincount(inv, weights=units.astype(np.float64))
            # units are exact int64; one rounding per weight
            weights = tot / UNIT
            u, v = uniq // n, uniq % n
        elif weighting == "harmonic":
            keys = np.concatenate([src * n + dst, mkeys, mkeys % n * n + mkeys // n])
            units = np.concatenate([cnt * UNIT, munits, munits])
            uniq, inv = np.unique(keys, return_inverse=True)
            tot = np.bincount(inv, weights=units.astype(np.float64))
            fwd = (uniq // n) < (uniq % n)
            fk, fw = uniq[fwd], tot[fwd]
            rk = (uniq[~fwd] % n) * n + uniq[~fwd] // n
            rw = tot[~fwd]
            if len(fk) and len(rk):
                pos = np.searchsorted(fk, rk)
                pos = np.minimum(pos, len(fk) - 1)
                pos_ok = fk[pos] == rk
                a_dir = fw[pos[pos_ok]] / UNIT
                b_dir = rw[pos_ok] / UNIT
                weights = 2.0 * a_dir * b_dir / (a_dir + b_dir)
                ck = rk[pos_ok]
                u, v = ck // n, ck % n
            else:
                u = v = np.empty(0, dtype=np.int64)
                weights = np.empty(0, dtype=np.float64)
        else:
            raise ValueError(f"unknown weighting {weighting!r}")
        graphs[w] = WeeklyGraph.from_pair_arrays(
            w, world.index, u.astype(np.int64), v.astype(np.int64), weights, n_universe=n
        )
    return graphs


def simulate_graphs(
    cfg: SimConfig, weighting: str = "sum"
) -> tuple[dict[int, WeeklyGraph], NodeIndex, SimTruth]:
    """Weekly graphs straight from the drawn counts (no event objects)."""
    world = _draw_world(cfg)
    return _graphs_from_world(world, weighting), world.index, world.truth


DEFAULT_ORIGIN = date(2023, 1, 2)
WEEK_SECONDS = 7 * 24 * 3600


def generate_log(
    cfg: SimConfig, origin: date = DEFAULT_ORIGIN
) -> tuple[list[EventRecord], SimTruth]:
    """Materialize the drawn counts as a timestamped event log.

    Aggregating this log week by week reproduces the graphs from
    :func:`simulate_graphs` up to float rounding of meeting shares.
    """
    world = _draw_world(cfg)
    ids = [world.index.ident(i) for i in range(cfg.n_employees)]
    rng_ts = np.random.default_rng(np.random.SeedSequence([cfg.seed, 5]))
    base = datetime(origin.year, origin.month, origin.day, tzinfo=timezone.utc)
    events: list[EventRecord] = []
    for w in range(cfg.n_weeks):
        src, dst, cnt = world.dm[w]
        week_events: list[tuple[float, EventRecord]] = []
        for s, d, c in zip(src, dst, cnt):
            offsets = rng_ts.uniform(0.0, WEEK_SECONDS, size=int(c))
            for off in offsets:
                ts = base + timedelta(seconds=w * WEEK_SECONDS + float(off))
                week_events.append(
                    (float(off), EventRecord(ts, ids[int(s)], (ids[int(d)],), DIRECT))
                )
        for part in world.meetings[w]:
            off = float(rng_ts.uniform(0.0, WEEK_SECONDS))
            ts = base + timedelta(seconds=w * WEEK_SECONDS + off)
            names = [ids[int(i)] for i in part]
            week_events.append(
                (
                    off,
                    EventRecord(ts, names[0], tuple(names[1:]), GROUP, group_size=len(names)),
                )
            )
        week_events.sort(key=lambda e: e[0])
        events.extend(e for _, e in week_events)
    return events, world.truth


def calendar_for(origin: date = DEFAULT_ORIGIN) -> CalendarConfig:
    return CalendarConfig(week_origin=origin, excluded_weeks=frozenset())


def attributes_frame(truth: SimTruth) -> pd.DataFrame:
    rows = [
        {"employee": emp, **attrs} for emp, attrs in sorted(truth.attributes.items())
    ]
    return pd.DataFrame(rows)


def _set_change(
    graphs: Mapping[int, WeeklyGraph],
    index: NodeIndex,
    ego: str,
    t_star: int,
    window: WindowConfig,
    metrics: Sequence[str],
    t_eval: int,
) -> dict[str, tuple[float, float]] | None:
    """Metric values at the two evaluation weeks t* -/+ t_eval, or None."""
    ss = build_socialization_set(graphs, ego, t_star, window)
    if ss is None:
        return None
    members_idx = np.array([index.get(m) for m in ss.members], dtype=np.int64)
    out: dict[str, tuple[float, float]] = {}
    vals: dict[str, list[float]] = {m: [] for m in metrics}
    for week in (t_star - t_eval, t_star + t_eval):
        g = graphs.get(week)
        if g is None:
            return None
        active = members_idx[g.active_mask(members_idx)]
        gm = group_metrics(DenseGraph(ids=active, w=g.induced_dense(active)))
        for m in metrics:
            vals[m].append(float(transform_target(m, np.array([gm[m]]))[0]))
    for m in metrics:
        out[m] = (vals[m][0], vals[m][1])
    return out


def oracle_expected_did(
    cfg: SimConfig,
    n_reps: int = 200,
    metrics: Sequence[str] = ("volume", "components", "closeness"),
    window: WindowConfig = WindowConfig(),
    weighting: str = "sum",
    t_eval: int = ORACLE_T_AVG,
    band: float = 95.0,
) -> pd.DataFrame:
    """Percentile band of the model-free expected value DiD per metric.

    Each replicate re-simulates with a derived seed and rebuilds the
    treated socialization sets plus one control set per departure around
    a randomly drawn non-departing ego at the same anchor week.  The
    replicate's estimate is the treated-minus-control mean difference of
    each metric between t* + t_eval and t* - t_eval, z-scored by the
    pooled standard deviation of the evaluated values.  No matching and
    no model: this is the direct estimate the pipeline must agree with.
    """
    bad = [m for m in metrics if m not in GROUP_METRICS]
    if bad:
        raise DataError(f"oracle supports group metrics only, got {bad}")
    reps: dict[str, list[float]] = {m: [] for m in metrics}
    for r in range(n_reps):
        rep_cfg = replace(cfg, seed=cfg.seed + 100_003 * (r + 1))
        graphs, index, truth = simulate_graphs(rep_cfg, weighting=weighting)
        rng_ctl = np.random.default_rng(np.random.SeedSequence([rep_cfg.seed, 6]))
        departing = {d.ego for d in truth.departures}
        pool = [index.ident(i) for i in range(len(index))]
        pool = [e for e in pool if e not in departing]
        changes: dict[bool, list[dict[str, tuple[float, float]]]] = {True: [], False: []}
        for dep in truth.departures:
            ch = _set_change(graphs, index, dep.ego, dep.t_star, window, metrics, t_eval)
            if ch is None:
                continue
            changes[True].append(ch)
            # rejection-sample a control ego active over the same freeze span
            for _ in range(50):
                ctl = pool[int(rng_ctl.integers(len(pool)))]
                ch_c = _set_change(graphs, index, ctl, dep.t_star, window, metrics, t_eval)
                if ch_c is not None:
                    changes[False].append(ch_c)
                    break
        for m in metrics:
            pooled = [v for side in changes.values() for ch in side for v in ch[m]]
            sd = float(np.std(pooled)) if pooled else 0.0
            scale = sd if sd > 0 else 1.0
            means = {}
            for flag, side in changes.items():
                diffs = [(ch[m][1] - ch[m][0]) / scale for ch in side]
                means[flag] = float(np.mean(diffs)) if diffs else 0.0
            reps[m].append(means[True] - means[False])
    lo_q = (100.0 - band) / 2.0
    rows = []
    for m in metrics:
        arr = np.array(reps[m])
        rows.append(
            {
                "metric": m,
                "mean": float(arr.mean()),
                "lo": float(np.percentile(arr, lo_q)),
                "hi": float(np.percentile(arr, 100.0 - lo_q)),
                "n_reps": n_reps,
            }
        )
    return pd.DataFrame(rows)
