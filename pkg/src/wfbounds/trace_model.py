"""Packet sequences, labels and labeled datasets, plus trace-file ingestion.

A trace file holds one packet per line, ``<time>\\t<signed_magnitude>``.
Positive magnitudes are outgoing (client to server), negative are incoming.
A magnitude of exactly 1 marks a Tor cell, whose size is configurable.
"""

from __future__ import annotations

import enum
import functools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

MTU = 1500
TOR_CELL_SIZE = 512

DEFAULT_NAMING_RULE = r"^(?P<page>[^-]+)-(?P<instance>[^-.]+)(?:\.\w+)?$"


class TraceFormatError(ValueError):
    """A trace file line could not be parsed."""


class TraceValidationError(ValueError):
    """Packet data violates the packet-sequence invariants."""


class EmptyDatasetError(ValueError):
    """No trace files matched when loading a dataset."""


class Direction(enum.IntEnum):
    OUT = 1
    IN = -1


class Packet(NamedTuple):
    time: float
    size: int
    direction: Direction


class PacketSequence:
    """Immutable, time-normalized sequence of packets.

    Stored column-wise as read-only numpy arrays: ``times`` (float64),
    ``sizes`` (int64) and ``directions`` (int8, +1 outgoing / -1 incoming).
    """

    __slots__ = ("times", "sizes", "directions")

    def __init__(self, times, sizes, directions, *, normalize: bool = True):
        times = np.array(times, dtype=np.float64).reshape(-1)
        sizes = np.array(sizes, dtype=np.int64).reshape(-1)
        directions = np.array(directions, dtype=np.int8).reshape(-1)
        if not (len(times) == len(sizes) == len(directions)):
            raise TraceValidationError("times, sizes and directions differ in length")
        if len(times) == 0:
            raise TraceValidationError("a packet sequence must be non-empty")
        if not np.all(np.isfinite(times)):
            raise TraceValidationError("packet times must be finite")
        if np.any(np.diff(times) < 0):
            raise TraceValidationError("packet times must be non-decreasing")
        if np.any(sizes <= 0) or np.any(sizes > MTU):
            raise TraceValidationError(f"packet sizes must lie in (0, {MTU}]")
        if not np.all(np.isin(directions, (1, -1))):
            raise TraceValidationError("directions must be +1 (out) or -1 (in)")
        if normalize:
            times = times - times[0]
        elif times[0] != 0:
            raise TraceValidationError("first packet time must be 0")
        for arr in (times, sizes, directions):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "directions", directions)

    def __setattr__(self, name, value):
        raise AttributeError("PacketSequence is immutable")

    @classmethod
    def from_packets(cls, packets: Iterable[tuple[float, int, int]]) -> "PacketSequence":
        rows = list(packets)
        if not rows:
            raise TraceValidationError("a packet sequence must be non-empty")
        times, sizes, dirs = zip(*rows)
        return cls(times, sizes, [int(d) for d in dirs])

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[Packet]:
        for t, s, d in zip(self.times, self.sizes, self.directions):
            yield Packet(float(t), int(s), Direction(int(d)))

    def __getitem__(self, i: int) -> Packet:
        return Packet(float(self.times[i]), int(self.sizes[i]), Direction(int(self.directions[i])))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PacketSequence):
            return NotImplemented
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.sizes, other.sizes)
            and np.array_equal(self.directions, other.directions)
        )

    def __hash__(self) -> int:
        return hash((self.times.tobytes(), self.sizes.tobytes(), self.directions.tobytes()))

    def __repr__(self) -> str:
        return f"PacketSequence(n={len(self)}, duration={self.duration:.6g})"

    @property
    def outgoing(self) -> np.ndarray:
        return self.directions == Direction.OUT

    @property
    def incoming(self) -> np.ndarray:
        return self.directions == Direction.IN

    @property
    def signed_sizes(self) -> np.ndarray:
        return self.sizes * self.directions

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])


@functools.total_ordering
@dataclass(frozen=True)
class Label:
    """A monitored page id, or the unmonitored symbol when ``page`` is None.

    Labels order by page id, with the unmonitored label after every page.
    """

    page: str | None

    @classmethod
    def monitored(cls, page) -> "Label":
        return cls(str(page))

    @property
    def is_monitored(self) -> bool:
        return self.page is not None

    def _key(self):
        return (1, "") if self.page is None else (0, self.page)

    def __lt__(self, other: "Label") -> bool:
        if not isinstance(other, Label):
            return NotImplemented
        return self._key() < other._key()

    def __str__(self) -> str:
        return "<unmonitored>" if self.page is None else self.page


UNMONITORED = Label(None)


@dataclass(frozen=True)
class LabeledDataset:
    traces: tuple[PacketSequence, ...]
    labels: tuple[Label, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "traces", tuple(self.traces))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"trace{i}" for i in range(len(self.traces))))
        else:
            object.__setattr__(self, "names", tuple(self.names))
        if not (len(self.traces) == len(self.labels) == len(self.names)):
            raise ValueError("traces, labels and names must be aligned")

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self):
        return iter(zip(self.traces, self.labels))

    @property
    def distinct_labels(self) -> list[Label]:
        return sorted(set(self.labels))

    @property
    def page_count(self) -> int:
        return len(set(self.labels))

    def instances_per_page(self) -> dict[Label, int]:
        counts: dict[Label, int] = {}
        for y in self.labels:
            counts[y] = counts.get(y, 0) + 1
        return dict(sorted(counts.items()))

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset(
            tuple(self.traces[i] for i in indices),
            tuple(self.labels[i] for i in indices),
            tuple(self.names[i] for i in indices),
        )

    def relabel(self, labels: Sequence[Label]) -> "LabeledDataset":
        return LabeledDataset(self.traces, tuple(labels), self.names)

    def require_evaluable(self) -> None:
        if self.page_count < 2:
            raise ValueError("evaluation needs at least two distinct labels")


def parse_trace(text: str, cell_size: int = TOR_CELL_SIZE) -> PacketSequence:
    """Parse a tab-separated trace.

    >>> list(parse_trace("0.0\\t1\\n0.5\\t-1", cell_size=512))  # doctest: +NORMALIZE_WHITESPACE
    [Packet(time=0.0, size=512, direction=<Direction.OUT: 1>),
     Packet(time=0.5, size=512, direction=<Direction.IN: -1>)]
    """
    times: list[float] = []
    sizes: list[int] = []
    dirs: list[int] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 2:
            raise TraceFormatError(f"line {lineno}: expected '<time>\\t<signed_magnitude>'")
        try:
            t = float(fields[0])
            m = float(fields[1])
        except ValueError:
            raise TraceFormatError(f"line {lineno}: non-numeric field") from None
        if not np.isfinite(t) or not np.isfinite(m):
            raise TraceFormatError(f"line {lineno}: non-finite value")
        if m == 0:
            raise TraceFormatError(f"line {lineno}: zero magnitude")
        mag = abs(m)
        if mag > 1 and mag != int(mag):
            raise TraceFormatError(f"line {lineno}: fractional packet size")
        times.append(t)
        sizes.append(int(mag) if mag > 1 else cell_size)
        dirs.append(1 if m > 0 else -1)
    if not times:
        raise TraceFormatError("trace is empty")
    bad = np.flatnonzero(np.diff(times) < 0)
    if len(bad):
        raise TraceValidationError(f"times decrease at packet {int(bad[0]) + 2}")
    return PacketSequence(times, sizes, dirs)


def serialize_trace(p: PacketSequence) -> str:
    """Inverse of :func:`parse_trace`; sizes are always written explicitly.

    A 1-byte packet serializes as a magnitude of 1, which parses back as a
    cell unless ``cell_size=1`` is passed to :func:`parse_trace`.
    """
    return "".join(f"{t!r}\t{s}\n" for t, s in zip(p.times.tolist(), p.signed_sizes.tolist()))


def load_dataset(
    directory,
    naming_rule: str = DEFAULT_NAMING_RULE,
    cell_size: int = TOR_CELL_SIZE,
) -> LabeledDataset:
    """Load every file whose name matches ``naming_rule`` from ``directory``.

    The rule must define a ``page`` group. Files are read in lexicographic
    name order, so repeated loads produce identical datasets.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {directory}")
    rule = re.compile(naming_rule)
    if "page" not in rule.groupindex:
        raise ValueError("naming rule must define a 'page' group")
    matched = []
    for path in sorted(directory.iterdir(), key=lambda q: q.name):
        if not path.is_file():
            continue
        m = rule.match(path.name)
        if m:
            matched.append((path, m.group("page")))
    if not matched:
        raise EmptyDatasetError(f"no trace files matched in {directory}")
    traces, labels, names = [], [], []
    for path, page in matched:
        try:
            text = path.read_text()
        except OSError as exc:
            raise OSError(f"cannot read {path}: {exc}") from exc
        try:
            traces.append(parse_trace(text, cell_size))
        except ValueError as exc:
            raise type(exc)(f"{path.name}: {exc}") from None
        labels.append(Label.monitored(page))
        names.append(path.name)
    return LabeledDataset(tuple(traces), tuple(labels), tuple(names))


def write_dataset(dataset: LabeledDataset, directory) -> list[Path]:
    """Write each trace under its dataset name; returns the paths written."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for p, name in zip(dataset.traces, dataset.names):
        path = directory / name
        path.write_text(serialize_trace(p))
        out.append(path)
    return out


def direction_string(p: PacketSequence) -> str:
    """'0' for each outgoing packet, '1' for each incoming one."""
    return "".join("0" if d > 0 else "1" for d in p.directions.tolist())


class TraceSummary(NamedTuple):
    n_in: int
    n_out: int
    bytes_in: int
    bytes_out: int
    duration: float


def summarize(p: PacketSequence) -> TraceSummary:
    out = p.outgoing
    return TraceSummary(
        n_in=int((~out).sum()),
        n_out=int(out.sum()),
        bytes_in=int(p.sizes[~out].sum()),
        bytes_out=int(p.sizes[out].sum()),
        duration=p.duration,
    )
