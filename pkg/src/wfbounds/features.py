"""Feature sets of the major website-fingerprinting attacks.

Each extractor maps a :class:`PacketSequence` to a fixed-length float
vector. Zero is the padding value everywhere. ``DIRECTION`` is the odd one
out: it yields the trace's direction string, for use with Levenshtein.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .trace_model import MTU, Label, LabeledDataset, PacketSequence, direction_string

VNG_BIN_WIDTH = 512
VNG_BINS = 100
KNN_FIRST_SIZES = 20
KNN_MAX_OUTGOING = 300
KNN_WINDOW = 30
KNN_MAX_WINDOWS = 100
CUMUL_POINTS = 100
KFP_CONCENTRATION_WINDOW = 20
KFP_BUCKETS = 20
KFP_HEAD = 30


class SchemaName(str, enum.Enum):
    LL = "LL"
    VNGPP = "VNGPP"
    KNN = "KNN"
    CUMUL = "CUMUL"
    KFP20 = "KFP20"
    FULLINFO = "FULLINFO"
    DIRECTION = "DIRECTION"
    SYNTHETIC = "SYNTHETIC"


@dataclass(frozen=True)
class FeatureSchema:
    name: SchemaName
    dimension: int
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "name", SchemaName(self.name))
        if self.name is not SchemaName.DIRECTION and self.dimension <= 0:
            raise ValueError("schema dimension must be positive")

    @property
    def is_sequence(self) -> bool:
        return self.name is SchemaName.DIRECTION

    def column_names(self) -> list[str]:
        return [f"{self.name.value}_{i}" for i in range(self.dimension)]


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema: FeatureSchema

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.schema.dimension,):
            raise ValueError(f"expected {self.schema.dimension} values, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class FeatureMatrix:
    """Objects aligned with labels.

    ``rows`` is an ``(n, d)`` float array for vector schemas and a tuple of
    strings for ``DIRECTION``.
    """

    rows: "np.ndarray | tuple[str, ...]"
    labels: tuple[Label, ...]
    schema: FeatureSchema

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.schema.is_sequence:
            object.__setattr__(self, "rows", tuple(self.rows))
        else:
            X = np.asarray(self.rows, dtype=np.float64)
            if X.ndim != 2 or X.shape[1] != self.schema.dimension:
                raise ValueError(f"rows must be (n, {self.schema.dimension}), got {X.shape}")
            X.setflags(write=False)
            object.__setattr__(self, "rows", X)
        if len(self.rows) != len(self.labels):
            raise ValueError("rows and labels must be aligned")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def label_count(self) -> int:
        return len(set(self.labels))

    def encoded_labels(self) -> tuple[np.ndarray, list[Label]]:
        """Integer codes whose order matches label order, plus the code table."""
        classes = sorted(set(self.labels))
        index = {y: i for i, y in enumerate(classes)}
        return np.array([index[y] for y in self.labels], dtype=np.int64), classes

    def take(self, indices) -> "FeatureMatrix":
        indices = np.asarray(indices, dtype=np.int64)
        if self.schema.is_sequence:
            rows = tuple(self.rows[i] for i in indices)
        else:
            rows = self.rows[indices]
        return FeatureMatrix(rows, tuple(self.labels[i] for i in indices), self.schema)

    def with_labels(self, labels: Sequence[Label]) -> "FeatureMatrix":
        return FeatureMatrix(self.rows, tuple(labels), self.schema)

    def to_csv(self, path) -> None:
        """Header is ``<schema>_<index>`` per column, then ``label``."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if self.schema.is_sequence:
                w.writerow([f"{self.schema.name.value}_0", "label"])
                for s, y in zip(self.rows, self.labels):
                    w.writerow([s, str(y)])
            else:
                w.writerow(self.schema.column_names() + ["label"])
                for row, y in zip(self.rows.tolist(), self.labels):
                    w.writerow([repr(v) for v in row] + [str(y)])


def _runs(directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start indices and lengths of maximal same-direction runs."""
    change = np.flatnonzero(np.diff(directions)) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [len(directions)]))
    return starts, ends - starts


def _pad(values, length: int) -> np.ndarray:
    out = np.zeros(length)
    values = np.asarray(values, dtype=np.float64)[:length]
    out[: len(values)] = values
    return out


def _aggregate(values, buckets: int) -> np.ndarray:
    # zero-pad to a multiple of ``buckets`` and sum consecutive chunks
    values = np.asarray(values, dtype=np.float64)
    width = max(1, math.ceil(len(values) / buckets))
    return _pad(values, width * buckets).reshape(buckets, width).sum(axis=1)


def extract_ll(p: PacketSequence) -> np.ndarray:
    """Counts per (direction, size); outgoing sizes 1..1500 first."""
    v = np.zeros(2 * MTU)
    offset = np.where(p.outgoing, 0, MTU)
    np.add.at(v, offset + p.sizes - 1, 1.0)
    return v


def extract_vngpp(p: PacketSequence) -> np.ndarray:
    out = p.outgoing
    head = [p.duration, float(p.sizes[out].sum()), float(p.sizes[~out].sum())]
    starts, lengths = _runs(p.directions)
    burst_bytes = np.add.reduceat(p.sizes, starts)
    bins = np.minimum((burst_bytes - 1) // VNG_BIN_WIDTH, VNG_BINS - 1)
    hist = np.zeros((2, VNG_BINS))
    side = np.where(p.directions[starts] > 0, 0, 1)
    np.add.at(hist, (side, bins), 1.0)
    return np.concatenate((head, hist.reshape(-1)))


def extract_knn(p: PacketSequence) -> np.ndarray:
    out = p.outgoing
    n_out = int(out.sum())
    n_in = len(p) - n_out
    general = [len(p), p.duration, n_in, n_out]
    first = _pad(p.signed_sizes[:KNN_FIRST_SIZES], KNN_FIRST_SIZES)
    out_idx = np.flatnonzero(out)[:KNN_MAX_OUTGOING]
    incoming = (~out).astype(np.int64)
    in_before = np.cumsum(incoming) - incoming
    ordering = np.zeros((KNN_MAX_OUTGOING, 2))
    ordering[: len(out_idx), 0] = out_idx
    ordering[: len(out_idx), 1] = in_before[out_idx]
    window_starts = np.arange(0, len(p), KNN_WINDOW)
    windows = _pad(np.add.reduceat(out.astype(np.float64), window_starts), KNN_MAX_WINDOWS)
    _, lengths = _runs(p.directions)
    bursts = [
        len(lengths),
        float(lengths.mean()),
        float(lengths.max()),
        int((lengths > 5).sum()),
        int((lengths > 10).sum()),
        int((lengths > 15).sum()),
    ]
    return np.concatenate((general, first, ordering.reshape(-1), windows, bursts))


def extract_cumul(p: PacketSequence) -> np.ndarray:
    out = p.outgoing
    head = [
        float((~out).sum()),
        float(out.sum()),
        float(p.sizes[~out].sum()),
        float(p.sizes[out].sum()),
    ]
    curve = np.cumsum(p.signed_sizes, dtype=np.float64)
    positions = np.linspace(0, len(p) - 1, CUMUL_POINTS)
    return np.concatenate((head, np.interp(positions, np.arange(len(p)), curve)))


def extract_kfp20(p: PacketSequence) -> np.ndarray:
    """The top-20 k-FP features, in rank order."""
    out = p.outgoing
    n_total = len(p)
    n_out = int(out.sum())
    n_in = n_total - n_out
    ordering = np.flatnonzero(out).astype(np.float64)
    ord_std = float(ordering.std()) if len(ordering) else 0.0
    ord_mean = float(ordering.mean()) if len(ordering) else 0.0
    starts = np.arange(0, n_total, KFP_CONCENTRATION_WINDOW)
    concentration = np.add.reduceat(out.astype(np.float64), starts)
    alt_concentration = _aggregate(concentration, KFP_BUCKETS)
    per_second = np.bincount(np.floor(p.times).astype(np.int64)).astype(np.float64)
    alt_per_second = _aggregate(per_second, KFP_BUCKETS)
    head = out[:KFP_HEAD]
    return np.array(
        [
            n_in,
            n_out / n_total,
            n_in / n_total,
            ord_std,
            n_out,
            alt_concentration.sum(),
            ord_mean,
            n_in + n_out + n_total,
            alt_per_second.sum(),
            n_total,
            *alt_concentration[:8],
            int((~head).sum()),
            int(head.sum()),
        ],
        dtype=np.float64,
    )


class TraceTooLongError(ValueError):
    pass


def extract_fullinfo(p: PacketSequence, max_len: int) -> np.ndarray:
    """Times then signed sizes, each half zero-padded to ``max_len``."""
    if len(p) > max_len:
        raise TraceTooLongError(f"trace has {len(p)} packets, max_len is {max_len}")
    return np.concatenate((_pad(p.times, max_len), _pad(p.signed_sizes, max_len)))


_FIXED: dict[SchemaName, tuple[Callable[[PacketSequence], np.ndarray], int]] = {
    SchemaName.LL: (extract_ll, 2 * MTU),
    SchemaName.VNGPP: (extract_vngpp, 3 + 2 * VNG_BINS),
    SchemaName.KNN: (extract_knn, 4 + KNN_FIRST_SIZES + 2 * KNN_MAX_OUTGOING + KNN_MAX_WINDOWS + 6),
    SchemaName.CUMUL: (extract_cumul, 4 + CUMUL_POINTS),
    SchemaName.KFP20: (extract_kfp20, 20),
}


def schema(name, max_len: int | None = None) -> FeatureSchema:
    name = SchemaName(name)
    if name in _FIXED:
        return FeatureSchema(name, _FIXED[name][1])
    if name is SchemaName.FULLINFO:
        if not max_len:
            raise ValueError("FULLINFO needs max_len")
        return FeatureSchema(name, 2 * max_len, {"max_len": max_len})
    return FeatureSchema(name, 0)


def extract(p: PacketSequence, s: FeatureSchema) -> "FeatureVector | str":
    if s.name is SchemaName.DIRECTION:
        return direction_string(p)
    if s.name is SchemaName.FULLINFO:
        return FeatureVector(extract_fullinfo(p, s.params["max_len"]), s)
    return FeatureVector(_FIXED[s.name][0](p), s)


def extract_matrix(dataset: LabeledDataset, name) -> FeatureMatrix:
    """Extract every trace, preserving dataset order.

    For ``FULLINFO`` the padding length is the longest trace in the dataset.
    """
    if len(dataset) == 0:
        raise ValueError("cannot extract features from an empty dataset")
    name = SchemaName(name)
    if name is SchemaName.DIRECTION:
        s = schema(name)
        return FeatureMatrix(tuple(direction_string(p) for p in dataset.traces), dataset.labels, s)
    if name is SchemaName.FULLINFO:
        max_len = max(len(p) for p in dataset.traces)
        s = schema(name, max_len)
        rows = [extract_fullinfo(p, max_len) for p in dataset.traces]
    else:
        s = schema(name)
        fn = _FIXED[name][0]
        rows = [fn(p) for p in dataset.traces]
    X = np.vstack(rows)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    return FeatureMatrix(X, dataset.labels, s)
