"""Pipeline stages and artifact manifest.

Each stage reads its input files, writes its outputs under the run
directory, and records sha256 hashes of both in ``manifest.json``.
Nothing in the manifest depends on when a stage ran, so re-running a
stage on identical inputs leaves identical bytes everywhere.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from . import cohort, matching, metrics as metrics_mod, model, panel as panel_mod, synth
from .config import RunConfig
from .errors import DataError
from .events import CalendarConfig, events_by_week, parse_events, write_events
from .graphs import NodeIndex, WeeklyGraph, build_weekly_graph
from .model import fit_all_metrics, fit_period_split
from .panel import PeriodSplit

MANIFEST = "manifest.json"


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _record(
    cfg: RunConfig,
    stage: str,
    inputs: Iterable[Path],
    outputs: Iterable[Path],
    params: Mapping,
    summary: Mapping,
) -> dict:
    outdir = Path(cfg.outdir)
    man_path = outdir / MANIFEST
    manifest = json.loads(man_path.read_text()) if man_path.exists() else {}

    def label(p: Path) -> str:
        try:
            return str(p.resolve().relative_to(outdir.resolve()))
        except ValueError:
            return str(p)

    manifest[stage] = {
        "inputs": {label(p): sha256_file(p) for p in inputs},
        "outputs": {label(p): sha256_file(p) for p in outputs},
        "params": dict(params),
        "summary": dict(summary),
    }
    man_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return dict(summary)


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {path}; run the {producer!r} stage first")
    return path


def _calendar(cfg: RunConfig) -> CalendarConfig:
    return CalendarConfig(
        week_origin=cfg.origin_date(), excluded_weeks=frozenset(cfg.excluded_weeks)
    )


def _window(cfg: RunConfig) -> cohort.WindowConfig:
    return cohort.WindowConfig(buffer=cfg.buffer, freeze=cfg.freeze)


def write_graphs_csv(graphs: Mapping[int, WeeklyGraph], path: Path) -> None:
    with open(path, "w") as fh:
        fh.write("week,src,dst,weight\n")
        for week in sorted(graphs):
            g = graphs[week]
            for a, b, w in g.edge_list():
                fh.write(f"{week},{a},{b},{w:.9g}\n")


def read_graphs_csv(path: Path) -> tuple[dict[int, WeeklyGraph], NodeIndex]:
    rows: list[tuple[int, str, str, float]] = []
    index = NodeIndex()
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "week,src,dst,weight":
            raise DataError(f"unexpected graphs header {header!r} in {path}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{path} line {lineno}: expected 4 fields")
            index.intern(parts[1])
            index.intern(parts[2])
            rows.append((int(parts[0]), parts[1], parts[2], float(parts[3])))
    by_week: dict[int, list[tuple[int, int, float]]] = {}
    for week, a, b, w in rows:
        ia, ib = index.intern(a), index.intern(b)
        if ib < ia:
            ia, ib = ib, ia
        by_week.setdefault(week, []).append((ia, ib, w))
    graphs: dict[int, WeeklyGraph] = {}
    n = len(index)
    for week, entries in by_week.items():
        u = np.array([e[0] for e in entries], dtype=np.int64)
        v = np.array([e[1] for e in entries], dtype=np.int64)
        w = np.array([e[2] for e in entries], dtype=np.float64)
        graphs[week] = WeeklyGraph.from_pair_arrays(week, index, u, v, w, n_universe=n)
    return graphs, index


def read_attributes(path: Path) -> dict[str, dict[str, float]]:
    df = pd.read_csv(path)
    if "employee" not in df.columns:
        raise DataError(f"{path} must have an 'employee' column")
    out: dict[str, dict[str, float]] = {}
    for _, row in df.iterrows():
        emp = str(row["employee"])
        out[emp] = {
            c: float(row[c]) for c in df.columns if c != "employee" and pd.notna(row[c])
        }
    return out


def _attributes_for(cfg: RunConfig) -> dict[str, dict[str, float]] | None:
    if cfg.attributes:
        return read_attributes(_require(Path(cfg.attributes), "simulate"))
    default = Path(cfg.outdir) / "attributes.csv"
    if default.exists():
        return read_attributes(default)
    return None


def sim_config_from(cfg: RunConfig) -> synth.SimConfig:
    raw = dict(cfg.sim or {})
    known = {f.name for f in dataclasses.fields(synth.SimConfig)}
    unknown = set(raw) - known
    if unknown:
        raise DataError(f"sim config has unknown keys: {sorted(unknown)}")
    for key in ("meeting_size", "departure_window"):
        if key in raw and raw[key] is not None:
            raw[key] = tuple(raw[key])
    raw.setdefault("seed", cfg.seed)
    raw.setdefault("lookahead", cfg.lookahead)
    sim = synth.SimConfig(**raw)
    sim.validate()
    return sim


def stage_simulate(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    sim = sim_config_from(cfg)
    events, truth = synth.generate_log(sim, origin=cfg.origin_date())
    events_path = outdir / "events.csv" if cfg.format == "csv" else outdir / "events.jsonl"
    with open(events_path, "w") as fh:
        write_events(events, fh, fmt=cfg.format)
    attrs_path = outdir / "attributes.csv"
    synth.attributes_frame(truth).to_csv(attrs_path, index=False, float_format="%.9g")
    truth_path = outdir / "truth.json"
    truth_path.write_text(
        json.dumps(
            {
                "departures": [
                    {"ego": d.ego, "t_star": d.t_star, "team": d.team}
                    for d in truth.departures
                ],
                "n_employees": sim.n_employees,
                "n_weeks": sim.n_weeks,
                "seed": sim.seed,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    summary = {"n_events": len(events), "n_departures": len(truth.departures)}
    return _record(
        cfg,
        "simulate",
        [],
        [events_path, attrs_path, truth_path],
        dataclasses.asdict(sim),
        summary,
    )


def stage_ingest(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    src = Path(cfg.events)
    if not src.exists():
        raise DataError(f"events file not found: {src}")
    with open(src) as fh:
        events, skipped = parse_events(fh, fmt=cfg.format, on_error="abort")
    if not events:
        raise DataError(f"no events parsed from {src}")
    canonical = outdir / "events.csv"
    if src.resolve() != canonical.resolve():
        with open(canonical, "w") as fh:
            write_events(events, fh, fmt="csv")
    summary = {"n_events": len(events), "skipped": skipped}
    return _record(
        cfg, "ingest", [src], [canonical], {"format": cfg.format}, summary
    )


def stage_graphs(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    events_path = _require(outdir / "events.csv", "ingest")
    with open(events_path) as fh:
        events, _ = parse_events(fh, fmt="csv")
    cal = _calendar(cfg)
    buckets = events_by_week(events, cal)
    index = NodeIndex()
    for evs in buckets.values():
        for ev in evs:
            for p in ev.participants():
                index.intern(p)
    graphs = {
        week: build_weekly_graph(buckets[week], week, index, weighting=cfg.weighting)
        for week in sorted(buckets)
    }
    out_path = outdir / "graphs.csv"
    write_graphs_csv(graphs, out_path)
    summary = {
        "n_weeks": len(graphs),
        "n_employees": len(index),
        "n_edges": int(sum(g.n_edges() for g in graphs.values())),
    }
    params = {"weighting": cfg.weighting, "excluded_weeks": list(cfg.excluded_weeks)}
    return _record(cfg, "graphs", [events_path], [out_path], params, summary)


def stage_departures(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    graphs_path = _require(outdir / "graphs.csv", "graphs")
    graphs, _ = read_graphs_csv(graphs_path)
    horizon = max(graphs)
    deps = cohort.detect_departures(graphs, horizon, lookahead=cfg.lookahead)
    out_path = outdir / "departures.csv"
    with open(out_path, "w") as fh:
        fh.write("employee,t_star\n")
        for d in deps:
            fh.write(f"{d.employee},{d.t_star}\n")
    summary = {"n_departures": len(deps), "horizon": horizon}
    return _record(
        cfg, "departures", [graphs_path], [out_path], {"lookahead": cfg.lookahead}, summary
    )


def read_departures(path: Path) -> list[cohort.Departure]:
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "employee,t_star":
            raise DataError(f"unexpected departures header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            emp, t_star = line.split(",")
            out.append(cohort.Departure(employee=emp, t_star=int(t_star)))
    return out


def stage_sets(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    graphs_path = _require(outdir / "graphs.csv", "graphs")
    deps_path = _require(outdir / "departures.csv", "departures")
    graphs, _ = read_graphs_csv(graphs_path)
    deps = read_departures(deps_path)
    sets, dropped = cohort.build_cohort(graphs, deps, _window(cfg))
    out_path = outdir / "sets.csv"
    with open(out_path, "w") as fh:
        cohort.write_sets(sets, fh)
    summary = {
        "n_sets": len(sets),
        "dropped_empty": dropped,
        "mean_size": float(np.mean([len(s.members) for s in sets])) if sets else 0.0,
    }
    params = {"buffer": cfg.buffer, "freeze": cfg.freeze}
    return _record(cfg, "sets", [graphs_path, deps_path], [out_path], params, summary)


def stage_match(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    graphs_path = _require(outdir / "graphs.csv", "graphs")
    sets_path = _require(outdir / "sets.csv", "sets")
    deps_path = _require(outdir / "departures.csv", "departures")
    graphs, _ = read_graphs_csv(graphs_path)
    with open(sets_path) as fh:
        treated = cohort.read_sets(fh)
    departing = {d.employee for d in read_departures(deps_path)}
    attrs = _attributes_for(cfg)
    mcfg = matching.MatchConfig(
        k_neighbors=cfg.k_neighbors,
        n_controls=cfg.n_controls,
        reuse_gap=cfg.reuse_gap,
        seed=cfg.seed,
    )
    matches, diag = matching.find_matches(
        graphs, treated, departing, mcfg, _window(cfg), attrs
    )
    controls, dropped_empty = matching.control_sets(graphs, matches, _window(cfg))

    matches_path = outdir / "matches.csv"
    with open(matches_path, "w") as fh:
        matching.write_matches(matches, fh)
    all_path = outdir / "sets_all.csv"
    combined = sorted(treated + controls, key=lambda s: (s.t_star, not s.treated, s.ego))
    with open(all_path, "w") as fh:
        cohort.write_sets(combined, fh)

    summary = dict(diag)
    summary["dropped_empty_control"] = dropped_empty
    summary["n_control_sets"] = len(controls)
    params = {
        "k_neighbors": cfg.k_neighbors,
        "n_controls": cfg.n_controls,
        "reuse_gap": cfg.reuse_gap,
        "seed": cfg.seed,
    }
    inputs = [graphs_path, sets_path, deps_path]
    return _record(cfg, "match", inputs, [matches_path, all_path], params, summary)


def stage_metrics(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    graphs_path = _require(outdir / "graphs.csv", "graphs")
    sets_path = _require(outdir / "sets_all.csv", "match")
    graphs, _ = read_graphs_csv(graphs_path)
    with open(sets_path) as fh:
        sets = cohort.read_sets(fh)
    series = metrics_mod.build_metric_series(
        graphs, sets, t_range=(cfg.t_min, cfg.t_max), metrics=cfg.metrics
    )
    out_path = outdir / "series.csv"
    series.to_csv(out_path, index=False, float_format="%.9g")
    summary = {"rows": len(series), "n_sets": int(series["set_id"].nunique()) if len(series) else 0}
    params = {"t_range": [cfg.t_min, cfg.t_max], "metrics": list(cfg.metrics or [])}
    return _record(cfg, "metrics", [graphs_path, sets_path], [out_path], params, summary)


def stage_panel(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    series_path = _require(outdir / "series.csv", "metrics")
    sets_path = _require(outdir / "sets_all.csv", "match")
    series = pd.read_csv(series_path)
    with open(sets_path) as fh:
        sets = cohort.read_sets(fh)
    pan, diag = panel_mod.assemble_panel(series, sets)
    out_path = outdir / "panel.csv"
    panel_mod.write_panel(pan, out_path)
    return _record(cfg, "panel", [series_path, sets_path], [out_path], {}, diag)


def stage_fit(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    panel_path = _require(outdir / "panel.csv", "panel")
    pan = panel_mod.read_panel(panel_path)
    results = fit_all_metrics(
        pan,
        metrics=list(cfg.metrics) if cfg.metrics else None,
        method=cfg.method,
        alpha=cfg.alpha,
        family_size=cfg.family_size,
    )
    out_path = outdir / "results.csv"
    results.to_csv(out_path, index=False, float_format="%.12g")
    outputs = [out_path]
    summary = {
        "n_metrics": len(results),
        "significant_value": int(results["value_sig"].sum()) if len(results) else 0,
        "significant_slope": int(results["slope_sig"].sum()) if len(results) else 0,
    }
    if cfg.split_cutoff is not None:
        split = PeriodSplit(cutoff_week=cfg.split_cutoff, buffer=cfg.split_buffer)
        periods = fit_period_split(
            pan,
            split,
            metrics=list(cfg.metrics) if cfg.metrics else None,
            method=cfg.method,
            alpha=cfg.alpha,
        )
        per_path = outdir / "results_periods.csv"
        pd.concat([periods["early"], periods["late"]], ignore_index=True).to_csv(
            per_path, index=False, float_format="%.12g"
        )
        outputs.append(per_path)
        summary["split_cutoff"] = cfg.split_cutoff
    params = {"method": cfg.method, "alpha": cfg.alpha, "split_cutoff": cfg.split_cutoff}
    return _record(cfg, "fit", [panel_path], outputs, params, summary)


def stage_report(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    results_path = _require(outdir / "results.csv", "fit")
    results = pd.read_csv(results_path)
    periods_path = outdir / "results_periods.csv"
    inputs = [results_path]

    findings = []
    for _, row in results.iterrows():
        for kind in ("value", "slope"):
            if bool(row.get(f"{kind}_sig", False)):
                findings.append(
                    {
                        "metric": row["metric"],
                        "effect": kind,
                        "estimate": float(row[f"{kind}_did"]),
                        "se": float(row[f"{kind}_se"]),
                        "p": float(row[f"{kind}_p"]),
                    }
                )
    findings.sort(key=lambda f: (f["metric"], f["effect"]))
    report = {
        "alpha": cfg.alpha,
        "family_size": int(results["family_size"].iloc[0]) if len(results) else 0,
        "findings": findings,
        "results": results.to_dict(orient="records"),
    }
    if periods_path.exists():
        inputs.append(periods_path)
        report["periods"] = pd.read_csv(periods_path).to_dict(orient="records")

    json_path = outdir / "report.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    txt_path = outdir / "report.txt"
    with open(txt_path, "w") as fh:
        fh.write(f"departure effects ({len(results)} metrics, alpha={cfg.alpha}, Bonferroni)\n")
        for _, row in results.iterrows():
            fh.write(
                f"{row['metric']}: value {row['value_did']:+.4f} (p={row['value_p']:.2e}"
                f"{', significant' if row['value_sig'] else ''}), "
                f"slope {row['slope_did']:+.4f} (p={row['slope_p']:.2e}"
                f"{', significant' if row['slope_sig'] else ''})\n"
            )
        if not len(results):
            fh.write("no metrics fit\n")
    summary = {"n_findings": len(findings)}
    return _record(cfg, "report", inputs, [json_path, txt_path], {"alpha": cfg.alpha}, summary)


def stage_oracle(cfg: RunConfig) -> dict:
    outdir = Path(cfg.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if cfg.sim is None:
        raise DataError("oracle requires a 'sim' section in the config")
    sim = sim_config_from(cfg)
    bands = synth.oracle_expected_did(
        sim,
        n_reps=cfg.oracle_reps,
        metrics=cfg.oracle_metrics,
        window=_window(cfg),
        weighting=cfg.weighting,
    )
    out_path = outdir / "oracle.json"
    payload = {
        row["metric"]: {
            "mean": row["mean"],
            "lo": row["lo"],
            "hi": row["hi"],
            "n_reps": int(row["n_reps"]),
        }
        for _, row in bands.iterrows()
    }
    out_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    params = {"n_reps": cfg.oracle_reps, "metrics": list(cfg.oracle_metrics)}
    return _record(cfg, "oracle", [], [out_path], params, {"metrics": len(payload)})


ANALYSIS_STAGES = (
    ("ingest", stage_ingest),
    ("graphs", stage_graphs),
    ("departures", stage_departures),
    ("sets", stage_sets),
    ("match", stage_match),
    ("metrics", stage_metrics),
    ("panel", stage_panel),
    ("fit", stage_fit),
    ("report", stage_report),
)

STAGES = dict(ANALYSIS_STAGES) | {"simulate": stage_simulate, "oracle": stage_oracle}


def run_all(cfg: RunConfig) -> dict:
    """Full analysis chain; simulates first when configured and needed."""
    if not Path(cfg.events).exists() and cfg.sim is not None:
        stage_simulate(cfg)
        suffix = "events.csv" if cfg.format == "csv" else "events.jsonl"
        cfg = dataclasses.replace(cfg, events=str(Path(cfg.outdir) / suffix))
    summaries = {}
    for name, fn in ANALYSIS_STAGES:
        summaries[name] = fn(cfg)
    return summaries
