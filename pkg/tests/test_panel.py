"""Panel assembly: transforms, controls, z-scoring, period splits."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from departnet.cohort import SocializationSet
from departnet.errors import DataError, ModelError
from departnet.panel import (
    LOG_METRICS,
    PANEL_COLUMNS,
    PeriodSplit,
    assemble_panel,
    fitting_table,
    panel_metrics,
    read_panel,
    split_panel,
    transform_target,
    write_panel,
)


def series_frame(rows):
    """rows: (set_id, ego, t_star, treated, t, metric, value)."""
    return pd.DataFrame(
        rows,
        columns=["set_id", "ego", "t_star", "treated", "t", "metric", "value"],
    ).assign(week=lambda d: d["t_star"] + d["t"])


SETS = [
    SocializationSet("e1", 10, True, ("a", "b", "c")),
    SocializationSet("x9", 12, False, ("d",)),
]


def base_rows():
    return [
        ("t:e1@10", "e1", 10, True, -1, "volume", 4.0),
        ("t:e1@10", "e1", 10, True, 1, "volume", 2.0),
        ("t:e1@10", "e1", 10, True, -1, "closeness", 0.5),
        ("c:x9@12", "x9", 12, False, -1, "volume", 3.0),
        ("c:x9@12", "x9", 12, False, 1, "closeness", 0.25),
    ]


class TestTransform:
    def test_log_metrics(self):
        out = transform_target("volume", np.array([0.0, np.e - 1]))
        assert out == pytest.approx([0.0, 1.0])

    def test_ratio_metric_is_identity(self):
        vals = np.array([0.3, 0.9])
        assert np.array_equal(transform_target("closeness", vals), vals)

    def test_negative_count_rejected(self):
        with pytest.raises(DataError):
            transform_target("connections", np.array([-0.5]))

    def test_log_set_membership(self):
        assert "volume_ind" in LOG_METRICS
        assert "closure" not in LOG_METRICS


class TestAssemble:
    def test_columns_and_controls(self):
        panel, diag = assemble_panel(series_frame(base_rows()), SETS)
        assert tuple(panel.columns) == PANEL_COLUMNS
        assert diag["rows"] == 5
        assert diag["dropped_missing"] == 0
        by_set = panel.set_index("set_id")
        assert by_set.loc["t:e1@10", "log1p_size"].iloc[0] == pytest.approx(np.log1p(3))
        assert by_set.loc["c:x9@12", "log1p_size"].iloc[0] == pytest.approx(np.log1p(1))
        assert by_set.loc["t:e1@10", "anchor_week"].iloc[0] == 10.0

    def test_targets_transformed(self):
        panel, _ = assemble_panel(series_frame(base_rows()), SETS)
        vol = panel[(panel["metric"] == "volume") & (panel["t"] == -1)]
        assert vol[vol["treated"]]["y"].iloc[0] == pytest.approx(np.log1p(4.0))
        clo = panel[panel["metric"] == "closeness"]
        assert clo[clo["treated"]]["y"].iloc[0] == pytest.approx(0.5)

    def test_nan_rows_dropped_and_counted(self):
        rows = base_rows() + [("t:e1@10", "e1", 10, True, 2, "volume_ind", float("nan"))]
        panel, diag = assemble_panel(series_frame(rows), SETS)
        assert diag["dropped_missing"] == 1
        assert len(panel) == 5

    def test_unknown_set_rejected(self):
        rows = base_rows() + [("t:ghost@9", "ghost", 9, True, 0, "volume", 1.0)]
        with pytest.raises(DataError):
            assemble_panel(series_frame(rows), SETS)

    def test_duplicate_observation_rejected(self):
        rows = base_rows() + [base_rows()[0]]
        with pytest.raises(DataError):
            assemble_panel(series_frame(rows), SETS)


class TestFittingTable:
    def panel(self):
        rng = np.random.default_rng(0)
        rows = []
        for s, (sid, treated) in enumerate([("t:a@10", True), ("c:b@10", False)]):
            for t in range(-3, 4):
                rows.append((sid, sid[2], 10, treated, t, "volume", rng.uniform(1, 5)))
                rows.append((sid, sid[2], 10, treated, t, "closure", rng.uniform(0, 1)))
        sets = [
            SocializationSet("a", 10, True, ("m1", "m2")),
            SocializationSet("b", 10, False, ("m3",)),
        ]
        panel, _ = assemble_panel(series_frame(rows), sets)
        return panel

    def test_zscored_in_place(self):
        tab = fitting_table(self.panel(), "volume")
        y = tab["y"].to_numpy()
        assert y.mean() == pytest.approx(0.0, abs=1e-12)
        assert y.std() == pytest.approx(1.0)
        assert set(tab["metric"]) == {"volume"}

    def test_mask_limits_rows_and_zscore_pool(self):
        panel = self.panel()
        mask = panel["treated"].to_numpy()
        tab = fitting_table(panel, "volume", mask=mask)
        assert tab["treated"].all()
        assert tab["y"].to_numpy().mean() == pytest.approx(0.0, abs=1e-12)

    def test_constant_target_centered(self):
        rows = [
            ("t:a@10", "a", 10, True, t, "closure", 0.5) for t in (-1, 1)
        ]
        sets = [SocializationSet("a", 10, True, ("m",))]
        panel, _ = assemble_panel(series_frame(rows), sets)
        tab = fitting_table(panel, "closure")
        assert np.all(tab["y"].to_numpy() == 0.0)

    def test_empty_table_is_model_error(self):
        with pytest.raises(ModelError):
            fitting_table(self.panel(), "diversity_ind")


class TestPeriodSplit:
    def test_assignment(self):
        split = PeriodSplit(cutoff_week=30, buffer=4)
        t_star = np.array([20, 25, 26, 30, 34, 35, 40])
        out = split.assign(t_star)
        assert list(out) == [
            "early",
            "early",
            "excluded",
            "excluded",
            "excluded",
            "late",
            "late",
        ]

    def test_split_panel_drops_buffer(self):
        rows = [
            ("t:a@20", "a", 20, True, 0, "volume", 1.0),
            ("t:b@30", "b", 30, True, 0, "volume", 1.0),
            ("t:c@40", "c", 40, True, 0, "volume", 1.0),
        ]
        sets = [
            SocializationSet("a", 20, True, ("m",)),
            SocializationSet("b", 30, True, ("m",)),
            SocializationSet("c", 40, True, ("m",)),
        ]
        panel, _ = assemble_panel(series_frame(rows), sets)
        parts = split_panel(panel, PeriodSplit(cutoff_week=30, buffer=4))
        assert list(parts["early"]["set_id"]) == ["t:a@20"]
        assert list(parts["late"]["set_id"]) == ["t:c@40"]


class TestRoundTrip:
    def test_write_read(self, tmp_path):
        panel, _ = assemble_panel(series_frame(base_rows()), SETS)
        path = tmp_path / "panel.csv"
        write_panel(panel, path)
        back = read_panel(path)
        assert tuple(back.columns) == tuple(panel.columns)
        assert back["treated"].dtype == bool
        pd.testing.assert_frame_equal(
            back, panel, check_exact=False, rtol=1e-8, check_dtype=False
        )

    def test_read_missing_columns(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("set_id,y\nx,1\n")
        with pytest.raises(DataError):
            read_panel(path)

    def test_panel_metrics_ordered(self):
        panel, _ = assemble_panel(series_frame(base_rows()), SETS)
        assert panel_metrics(panel) == ["closeness", "volume"]
