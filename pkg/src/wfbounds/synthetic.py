"""Synthetic data with analytically known Bayes error, and toy page loads.

The feature-space generators validate the estimator chain end to end:
for each kind the exact Bayes error under equal priors is known in closed
form. :func:`synthetic_traces` produces packet-level datasets for
exercising defenses and scenarios without an external corpus.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix, FeatureSchema, SchemaName
from .trace_model import TOR_CELL_SIZE, Label, LabeledDataset, PacketSequence


class SyntheticKind(str, enum.Enum):
    UNIFORM_OVERLAP = "uniform_overlap"
    IDENTICAL_CLASSES = "identical_classes"
    SEPARATED_CLOUDS = "separated_clouds"


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic labelled sample.

    ``uniform_overlap``: two labels, first coordinate uniform on ``[0, 1]``
    and ``[shift, shift + 1]``. ``identical_classes``: every label uniform
    on the unit cube. ``separated_clouds``: label ``l`` is the unit cube
    shifted by ``l * (1 + gap)`` along the first axis; a negative gap (down
    to -0.5) makes neighbouring clouds overlap. Extra coordinates are
    uniform noise shared by all labels and leave the Bayes error unchanged.
    """

    kind: SyntheticKind
    labels: int = 2
    samples_per_label: int = 1000
    seed: int = 0
    dimension: int = 1
    shift: float = 0.5
    gap: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind(self.kind))
        if self.labels < 2:
            raise ValueError("need at least two labels")
        if self.samples_per_label < 1 or self.dimension < 1:
            raise ValueError("samples_per_label and dimension must be positive")
        if self.kind is SyntheticKind.UNIFORM_OVERLAP:
            if self.labels != 2:
                raise ValueError("uniform_overlap is defined for two labels")
            if not 0.0 <= self.shift <= 1.0:
                raise ValueError("shift must lie in [0, 1]")
        if self.kind is SyntheticKind.SEPARATED_CLOUDS and self.gap < -0.5:
            raise ValueError("gap must be at least -0.5")


def _label(i: int, L: int) -> Label:
    return Label.monitored(str(i).zfill(len(str(L - 1))))


def generate(spec: SyntheticSpec) -> FeatureMatrix:
    rng = np.random.default_rng(spec.seed)
    n, d, L = spec.samples_per_label, spec.dimension, spec.labels
    blocks, labels = [], []
    for i in range(L):
        X = rng.random((n, d))
        if spec.kind is SyntheticKind.UNIFORM_OVERLAP and i == 1:
            X[:, 0] += spec.shift
        elif spec.kind is SyntheticKind.SEPARATED_CLOUDS:
            X[:, 0] += i * (1.0 + spec.gap)
        blocks.append(X)
        labels.extend([_label(i, L)] * n)
    schema = FeatureSchema(SchemaName.SYNTHETIC, d, {"kind": spec.kind.value})
    return FeatureMatrix(np.vstack(blocks), labels, schema)


def analytic_bayes_error(spec: SyntheticSpec) -> float:
    """Exact Bayes error of ``spec`` under equal label priors."""
    L = spec.labels
    if spec.kind is SyntheticKind.UNIFORM_OVERLAP:
        # overlap [shift, 1] holds (1 - shift) of each label's mass; half is lost
        return (1.0 - spec.shift) / 2.0
    if spec.kind is SyntheticKind.IDENTICAL_CLASSES:
        return (L - 1) / L
    if spec.kind is SyntheticKind.SEPARATED_CLOUDS:
        if spec.gap >= 0:
            return 0.0
        # each of the L-1 neighbour overlaps of width -gap loses half its mass
        return (L - 1) * (-spec.gap) / L
    raise ValueError(f"no analytic Bayes error for {spec.kind}")


def synthetic_traces(
    pages: int = 5,
    instances: int = 10,
    seed: int = 0,
    mean_packets: tuple[int, int] = (40, 200),
    cell_size: int = TOR_CELL_SIZE,
    jitter: float = 0.15,
) -> LabeledDataset:
    """Toy cell-level page loads, one profile per page.

    A page fixes a packet budget, an outgoing fraction, a direction
    switching probability and a mean inter-packet gap; instances vary
    around them by ``jitter``. Every packet is one cell.
    """
    rng = np.random.default_rng(seed)
    lo, hi = mean_packets
    traces, labels, names = [], [], []
    width = len(str(pages - 1))
    for page in range(pages):
        budget = rng.integers(lo, hi + 1)
        p_out = rng.uniform(0.1, 0.4)
        switch = rng.uniform(0.1, 0.5)
        gap = rng.uniform(0.005, 0.05)
        for inst in range(instances):
            n = max(2, int(round(budget * (1 + jitter * rng.standard_normal()))))
            dirs = np.empty(n, dtype=np.int8)
            dirs[0] = 1
            for j in range(1, n):
                if rng.random() < switch:
                    dirs[j] = 1 if rng.random() < p_out else -1
                else:
                    dirs[j] = dirs[j - 1]
            gaps = rng.exponential(gap * (1 + jitter * rng.standard_normal() ** 2), size=n - 1)
            times = np.concatenate(([0.0], np.cumsum(gaps)))
            traces.append(PacketSequence(times, np.full(n, cell_size), dirs))
            labels.append(Label.monitored(f"p{str(page).zfill(width)}"))
            names.append(f"p{str(page).zfill(width)}-{inst}")
    return LabeledDataset(tuple(traces), tuple(labels), tuple(names))
