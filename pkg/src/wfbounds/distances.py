"""Distance metrics for nearest-neighbour search.

The scalar functions are plain numpy. :func:`pairwise` is the bulk path
used by the estimators: scipy's ``cdist`` for vectors and rapidfuzz for
direction strings, both exact.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from rapidfuzz.distance import Levenshtein as _rf_levenshtein
from rapidfuzz.process import cdist as _rf_cdist
from scipy.spatial.distance import cdist


class MetricKind(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    STD_EUCLIDEAN = "std_euclidean"
    CITYBLOCK = "cityblock"
    LEVENSHTEIN = "levenshtein"


@dataclass(frozen=True)
class MetricSpec:
    """A metric choice. ``stds`` only applies to standardized Euclidean.

    Leaving ``stds`` unset for standardized Euclidean means "estimate from
    the training rows", which is what cross-validation does per fold.
    """

    kind: MetricKind = MetricKind.EUCLIDEAN
    stds: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", MetricKind(self.kind))
        if self.stds is not None:
            if self.kind is not MetricKind.STD_EUCLIDEAN:
                raise ValueError("stds only apply to the standardized Euclidean metric")
            stds = tuple(float(s) for s in self.stds)
            if any(not s > 0 for s in stds):
                raise ValueError("standard deviations must be strictly positive")
            object.__setattr__(self, "stds", stds)

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def is_string_metric(self) -> bool:
        return self.kind is MetricKind.LEVENSHTEIN

    def with_stds(self, stds) -> "MetricSpec":
        return MetricSpec(self.kind, tuple(np.asarray(stds, dtype=float)))


def _pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    return x, y


def euclidean(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sqrt(np.sum((x - y) ** 2)))


def std_euclidean(x, y, stds) -> float:
    x, y = _pair(x, y)
    stds = np.asarray(stds, dtype=np.float64).reshape(-1)
    if stds.shape != x.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} values vs {stds.shape[0]} stds")
    if np.any(stds <= 0):
        raise ValueError("standard deviations must be strictly positive")
    return float(np.sqrt(np.sum(((x - y) / stds) ** 2)))


def cityblock(x, y) -> float:
    x, y = _pair(x, y)
    return float(np.sum(np.abs(x - y)))


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance, two-row dynamic programme."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def training_stds(X: np.ndarray) -> np.ndarray:
    """Per-column population std of ``X``; zero-variance columns map to 1."""
    s = np.asarray(X, dtype=np.float64).std(axis=0)
    s[~(s > 0)] = 1.0
    return s


def distance(metric: MetricSpec, x, y) -> float:
    if metric.kind is MetricKind.EUCLIDEAN:
        return euclidean(x, y)
    if metric.kind is MetricKind.STD_EUCLIDEAN:
        if metric.stds is None:
            raise ValueError("standardized Euclidean needs stds for a single pair")
        return std_euclidean(x, y, metric.stds)
    if metric.kind is MetricKind.CITYBLOCK:
        return cityblock(x, y)
    return float(levenshtein(x, y))


def pairwise(metric: MetricSpec, A, B) -> np.ndarray:
    """Distance matrix between the rows of ``A`` and the rows of ``B``.

    For Levenshtein, ``A`` and ``B`` are sequences of strings.
    """
    if metric.kind is MetricKind.LEVENSHTEIN:
        return _rf_cdist(list(A), list(B), scorer=_rf_levenshtein.distance, dtype=np.int64).astype(
            np.float64
        )
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise ValueError(f"incompatible shapes {A.shape} and {B.shape}")
    if metric.kind is MetricKind.EUCLIDEAN:
        return cdist(A, B, "euclidean")
    if metric.kind is MetricKind.CITYBLOCK:
        return cdist(A, B, "cityblock")
    if metric.stds is None:
        raise ValueError("standardized Euclidean needs stds; see training_stds")
    stds = np.asarray(metric.stds)
    if stds.shape[0] != A.shape[1]:
        raise ValueError(f"{stds.shape[0]} stds for {A.shape[1]} dimensions")
    return cdist(A, B, "seuclidean", V=stds**2)


def pairwise_chunks(metric: MetricSpec, A, B, max_cells: int = 4_000_000):
    """Yield ``(start, D)`` blocks of the ``A``-by-``B`` distance matrix."""
    n = len(A)
    step = max(1, max_cells // max(1, len(B)))
    for start in range(0, n, step):
        yield start, pairwise(metric, A[start : start + step], B)
