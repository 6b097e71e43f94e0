"""Nearest-neighbour lower bounds on the Bayes error of website-fingerprinting attacks."""

__version__ = "0.1.0"

from .bayes_bounds import (
    BoundEstimate,
    StratificationError,
    bayes_lower_bound,
    estimate_bound,
    knn_resubstitution_estimate,
    nn_error_cv,
    nn_upper_bound,
)
from .defenses import DefenseConfigError, DefenseKind, DefenseSpec, HistogramConfig, apply
from .distances import MetricKind, MetricSpec
from .features import FeatureMatrix, SchemaName, extract, extract_matrix
from .lookup_bound import Observable, lookup_table_error
from .privacy import advantage, epsilon_privacy, median_overheads, privacy_report, random_guess_error
from .scenarios import ScenarioKind, ScenarioSpec, closed_world_eval, learning_curve, one_vs_all_eval
from .synthetic import SyntheticKind, SyntheticSpec, analytic_bayes_error, generate
from .trace_model import (
    UNMONITORED,
    Direction,
    Label,
    LabeledDataset,
    PacketSequence,
    load_dataset,
    parse_trace,
    serialize_trace,
)

__all__ = [
    "BoundEstimate",
    "DefenseConfigError",
    "DefenseKind",
    "DefenseSpec",
    "Direction",
    "FeatureMatrix",
    "HistogramConfig",
    "Label",
    "LabeledDataset",
    "MetricKind",
    "MetricSpec",
    "Observable",
    "PacketSequence",
    "ScenarioKind",
    "ScenarioSpec",
    "SchemaName",
    "StratificationError",
    "SyntheticKind",
    "SyntheticSpec",
    "UNMONITORED",
    "advantage",
    "analytic_bayes_error",
    "apply",
    "bayes_lower_bound",
    "closed_world_eval",
    "epsilon_privacy",
    "estimate_bound",
    "extract",
    "extract_matrix",
    "generate",
    "knn_resubstitution_estimate",
    "learning_curve",
    "load_dataset",
    "lookup_table_error",
    "median_overheads",
    "nn_error_cv",
    "nn_upper_bound",
    "one_vs_all_eval",
    "parse_trace",
    "privacy_report",
    "random_guess_error",
    "serialize_trace",
]
