"""Control matching: exclusions, determinism, nearest-neighbor shortlist."""

from __future__ import annotations

import io

import numpy as np
import pytest

from departnet.cohort import SocializationSet, WindowConfig, build_socialization_set
from departnet.errors import DataError
from departnet.graphs import NodeIndex, WeeklyGraph
from departnet.matching import (
    ExclusionLedger,
    Match,
    MatchConfig,
    control_sets,
    find_matches,
    read_matches,
    window_feature_arrays,
    write_matches,
    zscore_pool,
)

from _oracles import oracle_local_clustering

N_EMP = 30
WINDOW = WindowConfig(buffer=2, freeze=2)  # window(t) = [t-4, t-2]


def random_world(seed: int, weeks=range(0, 15), n=N_EMP):
    """Shared-index random weekly graphs, dense enough that everyone is active."""
    rng = np.random.default_rng(seed)
    index = NodeIndex([f"e{i:02d}" for i in range(n)])
    graphs = {}
    for week in weeks:
        iu, ju = np.triu_indices(n, k=1)
        present = rng.random(len(iu)) < 0.25
        w = rng.uniform(0.5, 3.0, size=len(iu))
        graphs[week] = WeeklyGraph.from_pair_arrays(
            week, index, iu[present], ju[present], w[present], n_universe=n
        )
    return index, graphs


def treated_fixtures(graphs, egos_tstars):
    sets = []
    for ego, t_star in egos_tstars:
        ss = build_socialization_set(graphs, ego, t_star, WINDOW, treated=True)
        assert ss is not None
        sets.append(ss)
    return sets


class TestLedger:
    def test_gap_semantics(self):
        led = ExclusionLedger(gap=4)
        led.record("c", 10)
        assert not led.available("c", 10)
        assert not led.available("c", 14)
        assert not led.available("c", 6)
        assert led.available("c", 15)
        assert led.available("c", 5)
        assert led.available("other", 10)

    def test_violation_count(self):
        led = ExclusionLedger(gap=4)
        matches = [
            Match("a", 10, "c", 0.0),
            Match("b", 12, "c", 0.0),  # within gap of week 10
            Match("d", 20, "c", 0.0),
            Match("e", 10, "x", 0.0),
        ]
        assert led.violations(matches) == 1


class TestFeatures:
    def test_window_average_over_active_weeks(self):
        index = NodeIndex(["a", "b", "c"])
        g1 = WeeklyGraph.from_pair_arrays(
            6, index, np.array([0]), np.array([1]), np.array([2.0]), n_universe=3
        )
        g2 = WeeklyGraph.from_pair_arrays(
            7, index, np.array([0, 0]), np.array([1, 2]), np.array([1.0, 1.0]), n_universe=3
        )
        feats, counts = window_feature_arrays({6: g1, 7: g2}, 10, WINDOW)
        # a active both weeks: connections (1+2)/2, volume (2+2)/2
        assert feats[0, 0] == pytest.approx(1.5)
        assert feats[0, 1] == pytest.approx(2.0)
        # c active only week 7
        assert counts[2] == 1
        assert feats[2, 0] == 1.0

    def test_unseen_employee_is_zero(self):
        index = NodeIndex(["a", "b", "idle"])
        g = WeeklyGraph.from_pair_arrays(
            6, index, np.array([0]), np.array([1]), np.array([1.0]), n_universe=3
        )
        feats, counts = window_feature_arrays({6: g}, 10, WINDOW)
        assert counts[2] == 0
        assert np.all(feats[2] == 0.0)

    def test_zscore_pool(self):
        x = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
        z = zscore_pool(x)
        assert z[:, 0].mean() == pytest.approx(0.0)
        assert z[:, 0].std() == pytest.approx(1.0)
        assert np.all(z[:, 1] == 0.0)  # constant column


class TestGuarantees:
    def run(self, seed=0):
        index, graphs = random_world(3)
        anchors = [("e00", 8), ("e01", 8), ("e02", 11)]
        treated = treated_fixtures(graphs, anchors)
        departing = {ego for ego, _ in anchors}
        cfg = MatchConfig(seed=seed)
        matches, diag = find_matches(graphs, treated, departing, cfg, WINDOW)
        return index, graphs, treated, departing, cfg, matches, diag

    def test_counts_and_exclusions(self):
        _, _, treated, departing, cfg, matches, diag = self.run()
        assert diag["matched"] == len(treated)
        assert diag["dropped_small_pool"] == 0
        assert len(matches) == cfg.n_controls * len(treated)
        members = {(s.ego, s.t_star): set(s.members) for s in treated}
        for m in matches:
            assert m.control != m.ego
            assert m.control not in departing
            assert m.control not in members[(m.ego, m.t_star)]
            assert m.distance >= 0.0
        assert diag["ledger_violations"] == 0
        assert diag["self_as_control"] == 0
        assert diag["neighbor_as_control"] == 0

    def test_deterministic_and_order_free(self):
        _, graphs, treated, departing, cfg, matches, _ = self.run()
        again, _ = find_matches(graphs, treated, departing, cfg, WINDOW)
        assert again == matches
        reordered, _ = find_matches(graphs, list(reversed(treated)), departing, cfg, WINDOW)
        assert reordered == matches

    def test_seed_changes_sampling(self):
        _, _, _, _, _, m0, _ = self.run(seed=0)
        _, _, _, _, _, m1, _ = self.run(seed=99)
        assert {(m.ego, m.control) for m in m0} != {(m.ego, m.control) for m in m1}

    def test_controls_come_from_nearest_shortlist(self):
        # independent reconstruction: features by per-node enumeration,
        # z-pool with the ego, lexicographic tie-break, ledger replayed
        # from the emitted matches in anchor order
        index, graphs, treated, departing, cfg, matches, _ = self.run()
        anchors = sorted(treated, key=lambda s: (s.t_star, s.ego))
        prior: list[Match] = []
        by_anchor = {}
        for m in matches:
            by_anchor.setdefault((m.ego, m.t_star), []).append(m)

        for sset in anchors:
            t_star = sset.t_star
            feats = self.brute_features(index, graphs, t_star)
            g = graphs[t_star]
            active = g.nodes()
            blocked = {
                m.control
                for m in prior
                if abs(m.t_star - t_star) <= cfg.reuse_gap
            }
            eligible = sorted(
                active - {sset.ego} - set(sset.members) - departing - blocked
            )
            ego_i = index.get(sset.ego)
            pool = np.array([feats[ego_i]] + [feats[index.get(c)] for c in eligible])
            z = zscore_pool(pool)
            dist = np.sqrt(((z[1:] - z[0]) ** 2).sum(axis=1))
            order = np.lexsort((np.array(eligible, dtype=str), dist))
            shortlist = {eligible[j]: dist[j] for j in order[: cfg.k_neighbors]}

            chosen = by_anchor[(sset.ego, t_star)]
            assert len(chosen) == cfg.n_controls
            for m in chosen:
                assert m.control in shortlist
                assert m.distance == pytest.approx(shortlist[m.control], rel=1e-9)
            prior.extend(chosen)

    @staticmethod
    def brute_features(index, graphs, t_star):
        n = len(index)
        dense = {}
        for week in WINDOW.window(t_star):
            g = graphs[week]
            w = np.zeros((n, n))
            for a, b, wt in g.edge_list():
                ia, ib = index.get(a), index.get(b)
                w[ia, ib] = w[ib, ia] = wt
            dense[week] = w
        feats = np.zeros((n, 3))
        for i in range(n):
            rows = []
            for w in dense.values():
                nbrs = np.flatnonzero(w[i] > 0)
                if len(nbrs) == 0:
                    continue
                rows.append(
                    (len(nbrs), w[i].sum(), oracle_local_clustering(w > 0, i))
                )
            if rows:
                feats[i] = np.mean(rows, axis=0)
        return feats

    def test_ledger_blocks_nearby_reuse(self):
        # many anchors, few candidates: reuse pressure is high, yet no
        # control may repeat within the gap
        index, graphs = random_world(5, weeks=range(0, 22), n=12)
        anchor_specs = [(f"e{i:02d}", 8 + i) for i in range(5)]
        treated = treated_fixtures(graphs, anchor_specs)
        departing = {e for e, _ in anchor_specs}
        cfg = MatchConfig(n_controls=2, reuse_gap=4)
        matches, diag = find_matches(graphs, treated, departing, cfg, WINDOW)
        assert diag["ledger_violations"] == 0
        seen: dict[str, list[int]] = {}
        for m in matches:
            for prev in seen.get(m.control, []):
                assert abs(prev - m.t_star) > cfg.reuse_gap
            seen.setdefault(m.control, []).append(m.t_star)

    def test_small_pool_dropped(self):
        index, graphs = random_world(1, n=5)
        ss = build_socialization_set(graphs, "e00", 8, WINDOW, treated=True)
        # everyone else is either a member or departing: pool too small
        departing = {"e00", "e01", "e02", "e03", "e04"}
        matches, diag = find_matches(graphs, [ss], departing, MatchConfig(), WINDOW)
        assert matches == []
        assert diag["dropped_small_pool"] == 1

    def test_manager_feature_enters_distance(self):
        # star graph: all leaves identical in network terms, so distance is
        # driven entirely by the manager flag
        n = 26
        index = NodeIndex(["hub"] + [f"L{i:02d}" for i in range(n - 1)])
        u = np.zeros(n - 1, dtype=np.int64)
        v = np.arange(1, n, dtype=np.int64)
        w = np.ones(n - 1)
        graphs = {
            week: WeeklyGraph.from_pair_arrays(week, index, u, v, w, n_universe=n)
            for week in range(0, 10)
        }
        ego = "L00"
        ss = SocializationSet(ego, 8, True, ("hub",))
        managers = {f"L{i:02d}": {"is_manager": 1.0} for i in range(1, 7)}
        matches, _ = find_matches(
            graphs, [ss], {ego}, MatchConfig(seed=3), WINDOW, attributes=managers
        )
        assert matches
        for m in matches:
            if m.distance == 0.0:
                assert m.control not in managers
            else:
                assert m.control in managers


class TestControlSets:
    def test_built_at_anchor_week(self):
        index, graphs = random_world(4)
        matches = [Match("e00", 8, "e10", 0.1), Match("e00", 8, "e11", 0.2)]
        sets, dropped = control_sets(graphs, matches, WINDOW)
        assert dropped == 0
        assert [s.ego for s in sets] == ["e10", "e11"]
        assert all(not s.treated for s in sets)
        assert all(s.t_star == 8 for s in sets)
        want = build_socialization_set(graphs, "e10", 8, WINDOW, treated=False)
        assert sets[0].members == want.members

    def test_empty_control_window_dropped(self):
        index, graphs = random_world(4)
        matches = [Match("e00", 8, "nobody", 0.0)]
        sets, dropped = control_sets(graphs, matches, WINDOW)
        assert sets == []
        assert dropped == 1


class TestSerialization:
    def test_round_trip(self):
        matches = [Match("a", 10, "x", 0.5), Match("b", 12, "y", 1.25)]
        buf = io.StringIO()
        write_matches(matches, buf)
        assert read_matches(io.StringIO(buf.getvalue())) == matches

    def test_bad_header(self):
        with pytest.raises(DataError):
            read_matches(io.StringIO("nope\n"))
