"""Measuring how employee departures disrupt communication networks.

Event logs become weekly weighted graphs; each departure defines a
socialization set whose group and individual metrics are tracked around
the departure week, compared against matched stayers, and fit with a
piecewise-linear random-intercept event-study model.
"""
from .cohort import (
    Departure,
    SocializationSet,
    WindowConfig,
    build_cohort,
    build_socialization_set,
    detect_departures,
    ego_network,
    group_subgraph,
)
from .config import RunConfig, load_config
from .errors import DataError, ModelError
from .events import CalendarConfig, EventRecord, assign_week, parse_events, write_events
from .graphs import (
    DenseGraph,
    NodeIndex,
    WeeklyGraph,
    build_weekly_graph,
    harmonic_symmetrize,
)
from .matching import Match, MatchConfig, find_matches
from .metrics import (
    ALL_METRICS,
    GROUP_METRICS,
    INDIVIDUAL_METRICS,
    build_metric_series,
    group_metrics,
    individual_metrics,
)
from .model import (
    FitResult,
    correct_significance,
    fit_all_metrics,
    fit_heterogeneous,
    fit_metric,
    fit_mixed,
    fit_period_split,
    slope_did,
    trajectories,
    value_did,
)
from .panel import PeriodSplit, assemble_panel, fitting_table, transform_target
from .synth import SimConfig, generate_log, oracle_expected_did, simulate_graphs

__version__ = "0.1.0"

__all__ = [
    "ALL_METRICS",
    "CalendarConfig",
    "DataError",
    "Departure",
    "DenseGraph",
    "EventRecord",
    "FitResult",
    "GROUP_METRICS",
    "INDIVIDUAL_METRICS",
    "Match",
    "MatchConfig",
    "ModelError",
    "NodeIndex",
    "PeriodSplit",
    "RunConfig",
    "SimConfig",
    "SocializationSet",
    "WeeklyGraph",
    "WindowConfig",
    "assemble_panel",
    "assign_week",
    "build_cohort",
    "build_metric_series",
    "build_socialization_set",
    "build_weekly_graph",
    "correct_significance",
    "detect_departures",
    "ego_network",
    "fit_all_metrics",
    "fit_heterogeneous",
    "fit_metric",
    "fit_mixed",
    "fit_period_split",
    "fitting_table",
    "find_matches",
    "generate_log",
    "group_metrics",
    "group_subgraph",
    "harmonic_symmetrize",
    "individual_metrics",
    "load_config",
    "oracle_expected_did",
    "parse_events",
    "simulate_graphs",
    "slope_did",
    "trajectories",
    "transform_target",
    "value_did",
    "write_events",
]
