"""Error of an idealized lookup-table adversary with restricted observables.

The adversary memorizes which pages produce each observable value and,
within a collision group, guesses the most frequent page (ties go to the
smallest label). With uniform priors this is the best a lookup adversary
can do, so the result is its error floor on the given data.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from typing import Hashable, Sequence

from .defenses import DefenseKind
from .trace_model import Label, LabeledDataset, PacketSequence


class Observable(str, enum.Enum):
    TOTAL_TRANSMISSION_SIZE = "total_size"
    PER_DIRECTION_COUNTS = "direction_counts"
    EXACT_SEQUENCE = "exact"


# what the adversary is restricted to against each deterministic defense
RESTRICTED_OBSERVABLE = {
    DefenseKind.BUFLO: Observable.TOTAL_TRANSMISSION_SIZE,
    DefenseKind.TAMARAW: Observable.PER_DIRECTION_COUNTS,
}


def observable(p: PacketSequence, kind: Observable) -> Hashable:
    kind = Observable(kind)
    if kind is Observable.TOTAL_TRANSMISSION_SIZE:
        return int(p.sizes.sum())
    if kind is Observable.PER_DIRECTION_COUNTS:
        n_out = int(p.outgoing.sum())
        return (len(p) - n_out, n_out)
    # bit-exact: raw bytes of all three columns
    return (p.times.tobytes(), p.sizes.tobytes(), p.directions.tobytes())


def lookup_error_from_keys(keys: Sequence[Hashable], labels: Sequence[Label]) -> float:
    if not keys:
        raise ValueError("need at least one trace")
    if len(keys) != len(labels):
        raise ValueError("keys and labels must be aligned")
    groups: dict[Hashable, Counter] = defaultdict(Counter)
    for k, y in zip(keys, labels):
        groups[k][y] += 1
    correct = sum(max(c.values()) for c in groups.values())
    return 1.0 - correct / len(keys)


def lookup_predictions(keys: Sequence[Hashable], labels: Sequence[Label]) -> dict:
    """Guess per observable value: the majority label, smallest on ties."""
    groups: dict[Hashable, Counter] = defaultdict(Counter)
    for k, y in zip(keys, labels):
        groups[k][y] += 1
    return {k: min(c, key=lambda y: (-c[y], y)) for k, c in groups.items()}


def lookup_table_error(dataset: LabeledDataset, kind: Observable) -> float:
    keys = [observable(p, kind) for p in dataset.traces]
    return lookup_error_from_keys(keys, dataset.labels)
