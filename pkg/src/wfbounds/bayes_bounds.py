"""Nearest-neighbour error under cross-validation and the Bayes-error lower bound.

With ``L`` equally likely labels, the asymptotic nearest-neighbour error
satisfies ``R* <= R_NN <= R* (2 - L/(L-1) R*)``. Inverting the upper
envelope turns a measured NN error into a lower bound on ``R*``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .distances import MetricKind, MetricSpec, pairwise_chunks, training_stds
from .features import FeatureMatrix


class StratificationError(ValueError):
    pass


def bayes_lower_bound(r_nn: float, L: int) -> float:
    """Lower bound on the Bayes error from an NN error ``r_nn`` over ``L`` labels.

    The radicand is clamped at zero, so NN errors at or beyond random
    guessing map to ``(L-1)/L``.
    """
    if L < 2:
        raise ValueError("need at least two labels")
    if not 0.0 <= r_nn <= 1.0:
        raise ValueError(f"r_nn must be a probability, got {r_nn}")
    g = (L - 1) / L
    return g * (1.0 - math.sqrt(1.0 - min(r_nn / g, 1.0)))


def nn_upper_bound(r_star: float, L: int) -> float:
    """Asymptotic NN error given a Bayes error ``r_star``."""
    if L < 2:
        raise ValueError("need at least two labels")
    g = (L - 1) / L
    if not 0.0 <= r_star <= g + 1e-15:
        raise ValueError(f"r_star must lie in [0, {g}], got {r_star}")
    return r_star * (2.0 - r_star / g)


def stratified_folds(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per row.

    For each label in ascending code order, its rows (taken in dataset
    order) are shuffled with one generator seeded by ``seed`` and dealt
    round-robin into the folds.
    """
    if folds < 2:
        raise StratificationError("need at least two folds")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    for y in np.unique(labels):
        rows = np.flatnonzero(labels == y)
        if len(rows) < folds:
            raise StratificationError(f"label {y} has {len(rows)} instances, fewer than {folds} folds")
        assignment[rows[rng.permutation(len(rows))]] = np.arange(len(rows)) % folds
    return assignment


def _rows(m: FeatureMatrix, idx: np.ndarray):
    if m.schema.is_sequence:
        return [m.rows[i] for i in idx]
    return m.rows[idx]


def _check_metric(m: FeatureMatrix, metric: MetricSpec) -> None:
    if metric.is_string_metric != m.schema.is_sequence:
        raise ValueError(
            f"metric {metric.name} is incompatible with the {m.schema.name.value} feature schema"
        )


def _fitted_metric(metric: MetricSpec, train_rows) -> MetricSpec:
    if metric.kind is MetricKind.STD_EUCLIDEAN and metric.stds is None:
        return metric.with_stds(training_stds(train_rows))
    return metric


def nearest_labels(metric: MetricSpec, train_rows, train_codes: np.ndarray, query_rows) -> np.ndarray:
    """1-NN prediction; equal distances go to the lowest training row."""
    metric = _fitted_metric(metric, train_rows)
    pred = np.empty(len(query_rows), dtype=np.int64)
    for start, D in pairwise_chunks(metric, query_rows, train_rows):
        pred[start : start + len(D)] = train_codes[np.argmin(D, axis=1)]
    return pred


def _vote(neighbour_codes: np.ndarray, n_classes: int) -> np.ndarray:
    # argmax returns the first maximum, i.e. the smallest label code
    counts = np.zeros((len(neighbour_codes), n_classes), dtype=np.int64)
    rows = np.repeat(np.arange(len(neighbour_codes)), neighbour_codes.shape[1])
    np.add.at(counts, (rows, neighbour_codes.reshape(-1)), 1)
    return np.argmax(counts, axis=1)


def knn_labels(metric: MetricSpec, train_rows, train_codes, query_rows, k: int, n_classes: int) -> np.ndarray:
    """Majority vote of the ``k`` nearest training rows.

    Distance ties are broken by training-row index and vote ties toward
    the smallest label code.
    """
    if k == 1:
        return nearest_labels(metric, train_rows, train_codes, query_rows)
    metric = _fitted_metric(metric, train_rows)
    k = min(k, len(train_codes))
    pred = np.empty(len(query_rows), dtype=np.int64)
    for start, D in pairwise_chunks(metric, query_rows, train_rows):
        nn = np.argsort(D, axis=1, kind="stable")[:, :k]
        pred[start : start + len(D)] = _vote(train_codes[nn], n_classes)
    return pred


def nn_error_cv(m: FeatureMatrix, metric: MetricSpec, folds: int = 5, seed: int = 0) -> tuple[float, list[float]]:
    """Stratified k-fold error of the 1-NN classifier.

    Returns the pooled error (misclassified rows over all rows) and the
    per-fold error rates. Standardized-Euclidean scales are re-estimated
    from each fold's training rows.
    """
    _check_metric(m, metric)
    codes, _ = m.encoded_labels()
    assignment = stratified_folds(codes, folds, seed)
    wrong = 0
    per_fold = []
    for f in range(folds):
        test = np.flatnonzero(assignment == f)
        train = np.flatnonzero(assignment != f)
        pred = nearest_labels(metric, _rows(m, train), codes[train], _rows(m, test))
        errors = int(np.sum(pred != codes[test]))
        wrong += errors
        per_fold.append(errors / len(test))
    return wrong / m.n, per_fold


def kn_neighbours(n: int, rule: str) -> int:
    if rule == "sqrt_n":
        return max(1, round(math.sqrt(n)))
    if rule == "log_n":
        return max(1, round(math.log(n)))
    raise ValueError(f"unknown k_n rule {rule!r}")


def knn_resubstitution_estimate(m: FeatureMatrix, metric: MetricSpec, kn_rule: str = "log_n") -> float:
    """Resubstitution error of the k_n-NN classifier.

    Each row votes with its ``k_n`` nearest rows, itself included (it is
    always ranked first). Converges to ``R*`` from below in expectation,
    so the value is optimistic.
    """
    _check_metric(m, metric)
    if m.n < 3:
        raise ValueError("need at least three rows")
    codes, classes = m.encoded_labels()
    k = min(kn_neighbours(m.n, kn_rule), m.n)
    metric = _fitted_metric(metric, m.rows)
    wrong = 0
    for start, D in pairwise_chunks(metric, m.rows, m.rows):
        D = D.copy()
        own = np.arange(start, start + len(D))
        D[np.arange(len(D)), own] = -1.0
        nn = np.argsort(D, axis=1, kind="stable")[:, :k]
        wrong += int(np.sum(_vote(codes[nn], len(classes)) != codes[own]))
    return wrong / m.n


@dataclass(frozen=True)
class BoundEstimate:
    r_nn: float
    r_star_lower: float
    label_count: int
    n: int
    folds: int
    metric: str
    per_fold_errors: tuple[float, ...]
    seed: int = 0
    schema: str = ""
    mode: str = "full"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_fold_errors"] = list(self.per_fold_errors)
        return d


def estimate_bound(
    m: FeatureMatrix, metric: MetricSpec, folds: int = 5, seed: int = 0, mode: str = "full"
) -> BoundEstimate:
    """Cross-validated NN error and the resulting Bayes lower bound.

    ``mode`` records whether ``m`` is a whole dataset or a training split.
    """
    L = m.label_count
    r_nn, per_fold = nn_error_cv(m, metric, folds, seed)
    return BoundEstimate(
        r_nn=r_nn,
        r_star_lower=bayes_lower_bound(r_nn, L),
        label_count=L,
        n=m.n,
        folds=folds,
        metric=metric.name,
        per_fold_errors=tuple(per_fold),
        seed=int(seed),
        schema=m.schema.name.value,
        mode=mode,
    )
