"""Closed World, One VS All and learning-curve evaluations."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bayes_bounds import BoundEstimate, estimate_bound, knn_labels
from .defenses import DefenseKind, DefenseSpec, apply, resolve_histograms
from .distances import MetricSpec
from .features import FeatureMatrix, SchemaName, extract_matrix
from .privacy import OverheadReport, PrivacyReport, median_overheads, privacy_report
from .trace_model import UNMONITORED, Label, LabeledDataset


class ScenarioKind(str, enum.Enum):
    CLOSED_WORLD = "closed_world"
    ONE_VS_ALL = "one_vs_all"


@dataclass(frozen=True)
class ScenarioSpec:
    kind: ScenarioKind = ScenarioKind.CLOSED_WORLD
    feature_schema: SchemaName = SchemaName.KNN
    metric: MetricSpec = field(default_factory=MetricSpec)
    folds: int = 5
    seed: int = 0
    defense: DefenseSpec = field(default_factory=DefenseSpec)
    # One VS All only; None means the smallest per-page instance count
    per_class_instances: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "feature_schema", SchemaName(self.feature_schema))
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        if self.per_class_instances is not None and self.per_class_instances < self.folds:
            raise ValueError("per_class_instances must be at least the fold count")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "feature_schema": self.feature_schema.value,
            "metric": self.metric.name,
            "folds": self.folds,
            "seed": int(self.seed),
            "defense": self.defense.to_dict(),
            "per_class_instances": self.per_class_instances,
        }


@dataclass(frozen=True)
class PageBound:
    page: Label
    bound: BoundEstimate


@dataclass(frozen=True)
class ScenarioReport:
    scenario: ScenarioKind
    bound: BoundEstimate
    privacy: PrivacyReport
    overheads: OverheadReport
    spec: ScenarioSpec
    per_page: tuple[PageBound, ...] = ()

    @property
    def r_star_mean(self) -> float:
        return self.bound.r_star_lower

    @property
    def r_star_std(self) -> float:
        if not self.per_page:
            return math.nan
        return float(np.std([pb.bound.r_star_lower for pb in self.per_page]))

    @property
    def r_star_min(self) -> float:
        if not self.per_page:
            return self.bound.r_star_lower
        return min(pb.bound.r_star_lower for pb in self.per_page)

    def to_dict(self) -> dict:
        d = {
            "scenario": self.scenario.value,
            "spec": self.spec.to_dict(),
            "bound": self.bound.to_dict(),
            "privacy": self.privacy.to_dict(),
            "overheads": self.overheads.to_dict(),
        }
        if self.per_page:
            d["one_vs_all"] = {
                "mean": self.r_star_mean,
                "std": self.r_star_std,
                "min": self.r_star_min,
                "pages": {str(pb.page): pb.bound.to_dict() for pb in self.per_page},
            }
        return d


def defend_dataset(dataset: LabeledDataset, defense: DefenseSpec, decoy_source: LabeledDataset | None = None) -> LabeledDataset:
    """Apply ``defense`` to every trace; trace ``i`` uses random stream ``(seed, i)``.

    Decoy overlays come from ``decoy_source`` (default: the dataset itself).
    WTF-PAD histograms, if not given, are fitted on the undefended dataset.
    """
    if defense.kind is DefenseKind.NONE:
        return dataset
    defense = resolve_histograms(defense, dataset)
    source = dataset if decoy_source is None else decoy_source
    traces = tuple(
        apply(defense, p, source, label=y, trace_index=i) for i, (p, y) in enumerate(dataset)
    )
    return LabeledDataset(traces, dataset.labels, dataset.names)


def _prepare(dataset: LabeledDataset, spec: ScenarioSpec):
    dataset.require_evaluable()
    defended = defend_dataset(dataset, spec.defense)
    overheads = median_overheads(dataset.traces, defended.traces)
    return defended, extract_matrix(defended, spec.feature_schema), overheads


def closed_world_eval(dataset: LabeledDataset, spec: ScenarioSpec) -> ScenarioReport:
    if any(not y.is_monitored for y in dataset.labels):
        raise ValueError("Closed World needs every trace labelled with a monitored page")
    _, m, overheads = _prepare(dataset, spec)
    bound = estimate_bound(m, spec.metric, spec.folds, spec.seed)
    privacy = privacy_report(bound.r_star_lower, bound.label_count, spec.feature_schema.value)
    return ScenarioReport(ScenarioKind.CLOSED_WORLD, bound, privacy, overheads, spec)


def one_vs_all_eval(dataset: LabeledDataset, spec: ScenarioSpec) -> ScenarioReport:
    """Bound each page against an equally sized pool of other pages' traces.

    For page ``w``: its first ``k`` traces in dataset order, plus ``k``
    traces drawn uniformly without replacement from all other pages and
    relabelled unmonitored. The pool for the ``j``-th page (label order)
    is drawn from stream ``(seed, j)``.
    """
    _, m, overheads = _prepare(dataset, spec)
    counts = dataset.instances_per_page()
    k = spec.per_class_instances or min(counts.values())
    short = [str(y) for y, c in counts.items() if c < k]
    if short:
        raise ValueError(f"pages with fewer than {k} instances: {short}")
    if k < spec.folds:
        raise ValueError(f"{k} instances per page is fewer than {spec.folds} folds")
    labels = np.array([str(y) for y in dataset.labels], dtype=object)
    per_page = []
    for j, page in enumerate(counts):
        own = np.flatnonzero(labels == str(page))[:k]
        others = np.flatnonzero(labels != str(page))
        if len(others) < k:
            raise ValueError(f"only {len(others)} traces outside page {page}, need {k}")
        rng = np.random.default_rng(np.random.SeedSequence([int(spec.seed), j]))
        pool = np.sort(rng.choice(others, size=k, replace=False))
        idx = np.concatenate((own, pool))
        sub = m.take(idx).with_labels([page] * k + [UNMONITORED] * k)
        per_page.append(PageBound(page, estimate_bound(sub, spec.metric, spec.folds, spec.seed)))
    r_nn = float(np.mean([pb.bound.r_nn for pb in per_page]))
    r_star = float(np.mean([pb.bound.r_star_lower for pb in per_page]))
    aggregate = BoundEstimate(
        r_nn=r_nn,
        r_star_lower=r_star,
        label_count=2,
        n=2 * k,
        folds=spec.folds,
        metric=spec.metric.name,
        per_fold_errors=(),
        seed=int(spec.seed),
        schema=spec.feature_schema.value,
        mode="one_vs_all_mean",
        extra={"pages": len(per_page), "per_class_instances": k},
    )
    privacy = privacy_report(r_star, 2, spec.feature_schema.value)
    return ScenarioReport(ScenarioKind.ONE_VS_ALL, aggregate, privacy, overheads, spec, tuple(per_page))


def evaluate(dataset: LabeledDataset, spec: ScenarioSpec) -> ScenarioReport:
    if spec.kind is ScenarioKind.ONE_VS_ALL:
        return one_vs_all_eval(dataset, spec)
    return closed_world_eval(dataset, spec)


@dataclass(frozen=True)
class CurvePoint:
    fraction: float
    n: int
    r_nn: float
    bound: float
    attack_error: float
    knn_attack_error: float | None
    k: int | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _validate_fractions(train_fractions: Sequence[float], test_fraction: float) -> None:
    if not train_fractions:
        raise ValueError("need at least one training fraction")
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    for f in train_fractions:
        if not 0 < f < 1:
            raise ValueError(f"training fraction {f} outside (0, 1)")
    if test_fraction + max(train_fractions) > 1 + 1e-9:
        raise ValueError("test fraction plus the largest training fraction exceeds 1")


def learning_curve_matrix(
    m: FeatureMatrix,
    metric: MetricSpec,
    train_fractions: Sequence[float],
    test_fraction: float = 0.2,
    folds: int = 5,
    seed: int = 0,
    k: int | None = 3,
) -> list[CurvePoint]:
    """Bound on growing training subsets against held-out attack errors.

    A stratified test split is fixed once. For each fraction ``f`` every
    label contributes ``round(f * count)`` training rows; the bound is the
    cross-validated estimate on those rows alone, and the attack errors are
    those of 1-NN (and ``k``-NN) trained on them and scored on the test split.
    """
    _validate_fractions(train_fractions, test_fraction)
    codes, classes = m.encoded_labels()
    rng = np.random.default_rng(seed)
    test_parts, pools = [], []
    for c in range(len(classes)):
        rows = np.flatnonzero(codes == c)
        rows = rows[rng.permutation(len(rows))]
        n_test = max(1, round(test_fraction * len(rows)))
        test_parts.append(rows[:n_test])
        pools.append(rows[n_test:])
    test = np.sort(np.concatenate(test_parts))
    test_rows = m.take(test)
    points = []
    for f in train_fractions:
        parts = []
        for c, pool in enumerate(pools):
            n_train = min(len(pool), round(f * np.sum(codes == c)))
            if n_train < 1:
                raise ValueError(f"training fraction {f} leaves label {classes[c]} without traces")
            parts.append(pool[:n_train])
        train = np.sort(np.concatenate(parts))
        train_m = m.take(train)
        est = estimate_bound(train_m, metric, folds, seed, mode="train")
        pred1 = knn_labels(metric, train_m.rows, codes[train], test_rows.rows, 1, len(classes))
        err1 = float(np.mean(pred1 != codes[test]))
        errk = None
        if k:
            predk = knn_labels(metric, train_m.rows, codes[train], test_rows.rows, k, len(classes))
            errk = float(np.mean(predk != codes[test]))
        points.append(CurvePoint(float(f), len(train), est.r_nn, est.r_star_lower, err1, errk, k))
    return points


def learning_curve(
    dataset: LabeledDataset,
    spec: ScenarioSpec,
    train_fractions: Sequence[float],
    test_fraction: float = 0.2,
    k: int | None = 3,
) -> list[CurvePoint]:
    dataset.require_evaluable()
    _validate_fractions(train_fractions, test_fraction)
    defended = defend_dataset(dataset, spec.defense)
    m = extract_matrix(defended, spec.feature_schema)
    return learning_curve_matrix(m, spec.metric, train_fractions, test_fraction, spec.folds, spec.seed, k)


def append_run_log(path, record: dict) -> None:
    """Append one JSON record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(record, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, Label):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
