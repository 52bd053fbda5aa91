"""Run configuration.

A run is described by one JSON object; command-line flags override
individual fields.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .errors import DataError

VALID_FREEZE = (4, 5, 6)
VALID_WEIGHTING = ("sum", "harmonic")
VALID_FORMAT = ("csv", "jsonl")
VALID_METHOD = ("reml", "ols_cluster")


@dataclass
class RunConfig:
    events: str = "events.csv"
    format: str = "csv"
    outdir: str = "out"
    attributes: str | None = None
    week_origin: str = "2023-01-02"
    excluded_weeks: tuple[int, ...] = ()
    weighting: str = "sum"
    buffer: int = 6
    freeze: int = 4
    lookahead: int = 12
    k_neighbors: int = 20
    n_controls: int = 3
    reuse_gap: int = 4
    seed: int = 0
    t_min: int = -16
    t_max: int = 16
    metrics: tuple[str, ...] | None = None
    method: str = "reml"
    alpha: float = 0.01
    family_size: int | None = None
    split_cutoff: int | None = None
    split_buffer: int = 4
    threads: int = 1
    sim: dict | None = None
    oracle_reps: int = 200
    oracle_metrics: tuple[str, ...] = ("volume", "components", "closeness")

    def validate(self) -> "RunConfig":
        if self.format not in VALID_FORMAT:
            raise DataError(f"format must be one of {VALID_FORMAT}, got {self.format!r}")
        if self.weighting not in VALID_WEIGHTING:
            raise DataError(
                f"weighting must be one of {VALID_WEIGHTING}, got {self.weighting!r}"
            )
        if self.freeze not in VALID_FREEZE:
            raise DataError(f"freeze must be one of {VALID_FREEZE}, got {self.freeze}")
        if self.method not in VALID_METHOD:
            raise DataError(f"method must be one of {VALID_METHOD}, got {self.method!r}")
        if self.buffer < 0 or self.lookahead < 1:
            raise DataError("buffer must be >= 0 and lookahead >= 1")
        if self.t_min > self.t_max:
            raise DataError(f"empty t range ({self.t_min}, {self.t_max})")
        if self.n_controls < 1 or self.k_neighbors < self.n_controls:
            raise DataError("need k_neighbors >= n_controls >= 1")
        if not 0 < self.alpha < 1:
            raise DataError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.threads < 1:
            raise DataError("threads must be >= 1")
        self.origin_date()  # parse check
        return self

    def origin_date(self) -> date:
        try:
            return date.fromisoformat(self.week_origin)
        except ValueError as exc:
            raise DataError(f"bad week_origin {self.week_origin!r}: {exc}") from exc

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        for key in ("excluded_weeks", "metrics", "oracle_metrics"):
            if d[key] is not None:
                d[key] = list(d[key])
        return json.dumps(d, indent=2, sort_keys=True)


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw, source=str(path))


def config_from_dict(raw: dict, source: str = "<dict>") -> RunConfig:
    if not isinstance(raw, dict):
        raise DataError(f"config {source} must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(raw) - known
    if unknown:
        raise DataError(f"config {source} has unknown keys: {sorted(unknown)}")
    kwargs = dict(raw)
    for key in ("excluded_weeks", "metrics", "oracle_metrics"):
        if key in kwargs and kwargs[key] is not None:
            kwargs[key] = tuple(kwargs[key])
    cfg = RunConfig(**kwargs)
    return cfg.validate()
