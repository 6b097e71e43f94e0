"""Website-fingerprinting defenses as transforms on packet sequences.

Every defense is a pure function of its parameters, the input trace and,
for probabilistic defenses, an explicit random generator. :func:`apply`
dispatches on a :class:`DefenseSpec` and derives the generator from
``(spec.seed, trace_index)``, so results never depend on evaluation order.

The constant-rate defenses (BuFLO, Tamaraw, CS-BuFLO) model payload as a
per-direction byte stream: each fixed-size packet carries up to ``d``
bytes that have already arrived at its emission time. Original packet
boundaries are not kept.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .trace_model import Direction, Label, LabeledDataset, PacketSequence, TOR_CELL_SIZE

# slack for float slot arithmetic, e.g. 0.3 / 0.1 = 2.9999999999999996
_SLOT_EPS = 1e-9


class DefenseConfigError(ValueError):
    pass


class DefenseKind(str, enum.Enum):
    NONE = "none"
    BUFLO = "buflo"
    TAMARAW = "tamaraw"
    DECOY = "decoy"
    CSBUFLO = "csbuflo"
    WTFPAD = "wtfpad"


# Defaults are the customary parameters for each defense, not tuned values.
_DEFAULTS: dict[DefenseKind, dict] = {
    DefenseKind.NONE: {},
    DefenseKind.BUFLO: {"d": TOR_CELL_SIZE, "rho": 0.02, "tau": 10.0},
    DefenseKind.TAMARAW: {"rho_in": 0.012, "rho_out": 0.04, "pad_multiple": 100, "d": TOR_CELL_SIZE},
    DefenseKind.DECOY: {},
    DefenseKind.CSBUFLO: {"d": TOR_CELL_SIZE, "rho_min": 0.002, "rho_max": 0.2},
    DefenseKind.WTFPAD: {"histograms": None},
}

_ALIASES = {
    "nodefense": DefenseKind.NONE,
    "no-defense": DefenseKind.NONE,
    "cs-buflo": DefenseKind.CSBUFLO,
    "cs_buflo": DefenseKind.CSBUFLO,
    "wtf-pad": DefenseKind.WTFPAD,
    "wtf_pad": DefenseKind.WTFPAD,
}


def _kind(name) -> DefenseKind:
    if isinstance(name, DefenseKind):
        return name
    key = str(name).strip().lower()
    if key in _ALIASES:
        return _ALIASES[key]
    try:
        return DefenseKind(key)
    except ValueError:
        raise DefenseConfigError(f"unknown defense {name!r}") from None


@dataclass(frozen=True)
class DefenseSpec:
    kind: DefenseKind = DefenseKind.NONE
    params: Mapping = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        kind = _kind(self.kind)
        object.__setattr__(self, "kind", kind)
        merged = dict(_DEFAULTS[kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise DefenseConfigError(f"{kind.value}: unknown parameters {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if not (0 <= int(self.seed) < 2**64):
            raise DefenseConfigError("seed must be a 64-bit unsigned integer")
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind in (DefenseKind.BUFLO, DefenseKind.TAMARAW, DefenseKind.CSBUFLO):
            for key in ("rho", "tau", "rho_in", "rho_out", "rho_min", "rho_max"):
                if key in p and not float(p[key]) > 0:
                    raise DefenseConfigError(f"{key} must be strictly positive")
            if not (0 < int(p["d"]) <= 1500):
                raise DefenseConfigError("packet size d must lie in (0, 1500]")
        if self.kind is DefenseKind.TAMARAW:
            if int(p["pad_multiple"]) < 1:
                raise DefenseConfigError("pad_multiple must be at least 1")
            if not float(p["rho_out"]) > float(p["rho_in"]):
                raise DefenseConfigError("Tamaraw requires rho_out > rho_in")
        if self.kind is DefenseKind.CSBUFLO and float(p["rho_min"]) > float(p["rho_max"]):
            raise DefenseConfigError("CS-BuFLO requires rho_min <= rho_max")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "DefenseSpec":
        """Parse ``name[:key=value,...]``, e.g. ``tamaraw:pad_multiple=50``."""
        name, _, rest = text.partition(":")
        params: dict = {}
        for item in filter(None, (s.strip() for s in rest.split(","))):
            key, eq, value = item.partition("=")
            if not eq:
                raise DefenseConfigError(f"malformed defense parameter {item!r}")
            key = key.strip()
            value = value.strip()
            if key == "histograms":
                params[key] = value
            elif key in ("d", "pad_multiple"):
                params[key] = int(value)
            else:
                params[key] = float(value)
        return cls(_kind(name), params, seed)

    @property
    def is_probabilistic(self) -> bool:
        return self.kind in (DefenseKind.DECOY, DefenseKind.WTFPAD)

    def to_dict(self) -> dict:
        params = {k: (str(v) if isinstance(v, Path) else v) for k, v in self.params.items()}
        if isinstance(params.get("histograms"), HistogramConfig):
            params["histograms"] = params["histograms"].to_dict()
        return {"kind": self.kind.value, "params": params, "seed": int(self.seed)}


def trace_rng(seed: int, trace_index: int) -> np.random.Generator:
    """Independent stream per (seed, trace index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(trace_index)]))


def _merge(parts) -> PacketSequence:
    """Merge (times, sizes, dirs) blocks; earlier blocks win time ties."""
    times = np.concatenate([t for t, _, _ in parts])
    sizes = np.concatenate([s for _, s, _ in parts])
    dirs = np.concatenate([d for _, _, d in parts])
    order = np.argsort(times, kind="stable")
    return PacketSequence(times[order], sizes[order], dirs[order])


def _stream(times: np.ndarray, sizes: np.ndarray, rho: float, d: int) -> int:
    """Slots needed to carry every byte at one packet of ``d`` bytes per slot.

    Slot ``k`` fires at ``k * rho`` and can only carry bytes that arrived
    by then. Returns the index after the last slot that carries payload
    (0 if there is none).
    """
    if len(times) == 0:
        return 0
    slots = np.ceil(times / rho - _SLOT_EPS).astype(np.int64)
    slots = np.maximum(slots, 0)
    uniq, first = np.unique(slots, return_index=True)
    per_slot = np.add.reduceat(sizes, first)
    k = 0
    backlog = 0
    for s, b in zip(uniq.tolist(), per_slot.tolist()):
        if backlog > 0:
            # the queue drains one packet per slot until the next arrival
            drained = min(s - k, math.ceil(backlog / d))
            backlog = max(0, backlog - drained * d)
            k += drained
        k = max(k, s)
        backlog += b
    return k + math.ceil(backlog / d)


def _constant_rate(count: int, rho: float, d: int, direction: int):
    times = np.arange(count, dtype=np.float64) * rho
    return times, np.full(count, d, dtype=np.int64), np.full(count, direction, dtype=np.int8)


def _split(p: PacketSequence, direction: int):
    mask = p.directions == direction
    return p.times[mask], p.sizes[mask]


def no_defense(p: PacketSequence) -> PacketSequence:
    return p


def buflo(p: PacketSequence, d: int, rho: float, tau: float) -> PacketSequence:
    """Fixed-size packets every ``rho`` seconds in both directions.

    Each direction keeps sending until at least ``tau`` has elapsed and
    all of its payload is covered; slots fire at ``k * rho``.
    """
    min_slots = math.ceil(tau / rho - _SLOT_EPS)
    parts = []
    for direction in (Direction.OUT, Direction.IN):
        t, s = _split(p, direction)
        count = max(min_slots, _stream(t, s, rho, d))
        parts.append(_constant_rate(count, rho, d, direction))
    return _merge(parts)


def tamaraw(p: PacketSequence, rho_in: float, rho_out: float, pad_multiple: int, d: int) -> PacketSequence:
    """Per-direction constant rates, packet counts padded to a multiple."""
    parts = []
    for direction, rho in ((Direction.OUT, rho_out), (Direction.IN, rho_in)):
        t, s = _split(p, direction)
        needed = _stream(t, s, rho, d)
        count = -(-needed // pad_multiple) * pad_multiple
        parts.append(_constant_rate(count, rho, d, direction))
    return _merge(parts)


def decoy(p: PacketSequence, q: PacketSequence) -> PacketSequence:
    """Overlay a background page load ``q``; ``p`` wins time ties."""
    return _merge([(p.times, p.sizes, p.directions), (q.times, q.sizes, q.directions)])


def _next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def cs_buflo(p: PacketSequence, d: int, rho_min: float, rho_max: float, seed: int = 0) -> PacketSequence:
    """Simplified congestion-sensitive BuFLO.

    Per direction the rate is the trace's mean inter-packet gap in that
    direction, clamped to ``[rho_min, rho_max]`` (``rho_max`` when there
    are fewer than two packets). Sending stops at the last real packet
    time, or once the payload is covered if that is later, and the
    direction's byte total is then padded to the next power of two.
    ``seed`` is accepted for interface parity; this model draws nothing.
    """
    del seed
    end = p.duration
    parts = []
    for direction in (Direction.OUT, Direction.IN):
        t, s = _split(p, direction)
        if len(t) >= 2:
            gap = (t[-1] - t[0]) / (len(t) - 1)
            rho = min(max(gap, rho_min), rho_max)
        else:
            rho = rho_max
        slots = max(math.floor(end / rho + _SLOT_EPS) + 1, _stream(t, s, rho, d))
        count = -(-_next_pow2(slots * d) // d)
        parts.append(_constant_rate(count, rho, d, direction))
    return _merge(parts)


@dataclass(frozen=True)
class Histogram:
    """Delay distribution: bins ``(lower, upper]`` with non-negative masses.

    ``upper_edges`` is strictly increasing and may end in ``inf``. Sampling
    picks a bin by mass, then a delay uniformly inside it; the infinity bin
    yields ``inf``.
    """

    upper_edges: tuple[float, ...]
    masses: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.upper_edges)
        masses = tuple(float(m) for m in self.masses)
        if len(edges) != len(masses) or not edges:
            raise DefenseConfigError("histogram needs matching, non-empty edges and masses")
        if any(m < 0 or not math.isfinite(m) for m in masses) or sum(masses) <= 0:
            raise DefenseConfigError("histogram masses must be non-negative with positive total")
        if edges[0] <= 0 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise DefenseConfigError("histogram edges must be positive and strictly increasing")
        object.__setattr__(self, "upper_edges", edges)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def from_pairs(cls, pairs) -> "Histogram":
        edges, masses = [], []
        for edge, mass in pairs:
            edges.append(math.inf if str(edge).lower() in ("inf", "infinity") else float(edge))
            masses.append(float(mass))
        return cls(tuple(edges), tuple(masses))

    def to_pairs(self) -> list:
        return [["inf" if math.isinf(e) else e, m] for e, m in zip(self.upper_edges, self.masses)]

    def sample(self, rng: np.random.Generator) -> float:
        probs = np.asarray(self.masses) / sum(self.masses)
        i = int(rng.choice(len(probs), p=probs))
        hi = self.upper_edges[i]
        if math.isinf(hi):
            return math.inf
        lo = self.upper_edges[i - 1] if i > 0 else 0.0
        # in (lo, hi], never zero
        return lo + (hi - lo) * (1.0 - rng.random())


ENDPOINTS = {"client": Direction.OUT, "server": Direction.IN}


@dataclass(frozen=True)
class HistogramConfig:
    """Burst and gap histograms per endpoint plus the dummy packet size.

    File form (JSON)::

        {"cell_size": 512,
         "client": {"burst": [[0.01, 3], [0.1, 1], ["inf", 1]], "gap": [...]},
         "server": {"burst": [...], "gap": [...]}}
    """

    histograms: Mapping[tuple[str, str], Histogram]
    cell_size: int = TOR_CELL_SIZE

    def __post_init__(self):
        for endpoint in ENDPOINTS:
            for state in ("burst", "gap"):
                if (endpoint, state) not in self.histograms:
                    raise DefenseConfigError(f"missing {endpoint}/{state} histogram")
        if not (0 < int(self.cell_size) <= 1500):
            raise DefenseConfigError("cell_size must lie in (0, 1500]")

    def get(self, endpoint: str, state: str) -> Histogram:
        return self.histograms[(endpoint, state)]

    @classmethod
    def from_dict(cls, data: Mapping) -> "HistogramConfig":
        try:
            hists = {
                (endpoint, state): Histogram.from_pairs(data[endpoint][state])
                for endpoint in ENDPOINTS
                for state in ("burst", "gap")
            }
        except (KeyError, TypeError) as exc:
            raise DefenseConfigError(f"malformed histogram config: {exc}") from None
        return cls(hists, int(data.get("cell_size", TOR_CELL_SIZE)))

    @classmethod
    def load(cls, path) -> "HistogramConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out: dict = {"cell_size": int(self.cell_size)}
        for (endpoint, state), h in sorted(self.histograms.items()):
            out.setdefault(endpoint, {})[state] = h.to_pairs()
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def _decile_histogram(samples: np.ndarray, what: str) -> Histogram:
    samples = samples[samples > 0]
    if len(samples) == 0:
        raise DefenseConfigError(f"no positive {what} inter-arrival times to fit")
    edges = np.unique(np.quantile(samples, np.linspace(0.1, 1.0, 10)))
    masses = [1.0] * len(edges)
    # one decile's worth of mass on "never fire", so states can fall idle
    return Histogram(tuple(edges.tolist()) + (math.inf,), tuple(masses) + (1.0,))


def fit_histograms(dataset: LabeledDataset, cell_size: int = TOR_CELL_SIZE) -> HistogramConfig:
    """Fit decile histograms from a dataset's inter-arrival times.

    Per endpoint, "burst" delays are gaps between consecutive packets of
    that endpoint inside one same-direction run, and "gap" delays are those
    spanning a run of the other direction.
    """
    hists = {}
    for endpoint, direction in ENDPOINTS.items():
        within, between = [], []
        for p in dataset.traces:
            idx = np.flatnonzero(p.directions == direction)
            if len(idx) < 2:
                continue
            dt = np.diff(p.times[idx])
            contiguous = np.diff(idx) == 1
            within.append(dt[contiguous])
            between.append(dt[~contiguous])
        cat = lambda xs: np.concatenate(xs) if xs else np.empty(0)  # noqa: E731
        hists[(endpoint, "burst")] = _decile_histogram(cat(within), f"{endpoint} burst")
        hists[(endpoint, "gap")] = _decile_histogram(cat(between), f"{endpoint} gap")
    return HistogramConfig(hists, cell_size)


def _endpoint_dummies(real_times: np.ndarray, end: float, burst: Histogram, gap: Histogram, rng) -> list[float]:
    dummies: list[float] = []
    n = len(real_times)
    for i in range(n):
        # a real packet puts the machine in burst
        cursor = float(real_times[i])
        nxt = float(real_times[i + 1]) if i + 1 < n else math.inf
        timeout = burst.sample(rng)
        while math.isfinite(timeout):
            fire = cursor + timeout
            if fire >= nxt or fire > end:
                break
            dummies.append(fire)
            cursor = fire
            timeout = gap.sample(rng)
    return dummies


def wtf_pad_schedule(p: PacketSequence, histograms: HistogramConfig, rng) -> tuple[PacketSequence, np.ndarray]:
    """WTF-PAD output plus a boolean mask marking dummy packets.

    Each endpoint runs its own idle/burst/gap machine over its own real
    packets. Dummies never extend past the trace's last real packet.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    streams = rng.spawn(len(ENDPOINTS))
    end = float(p.times[-1])
    parts = [(p.times, p.sizes, p.directions)]
    flags = [np.zeros(len(p), dtype=bool)]
    for (endpoint, direction), stream in zip(ENDPOINTS.items(), streams):
        real = p.times[p.directions == direction]
        dummies = _endpoint_dummies(
            real, end, histograms.get(endpoint, "burst"), histograms.get(endpoint, "gap"), stream
        )
        k = len(dummies)
        parts.append(
            (
                np.asarray(dummies, dtype=np.float64),
                np.full(k, histograms.cell_size, dtype=np.int64),
                np.full(k, direction, dtype=np.int8),
            )
        )
        flags.append(np.ones(k, dtype=bool))
    times = np.concatenate([t for t, _, _ in parts])
    order = np.argsort(times, kind="stable")
    sizes = np.concatenate([s for _, s, _ in parts])
    dirs = np.concatenate([d for _, _, d in parts])
    mask = np.concatenate(flags)[order]
    return PacketSequence(times[order], sizes[order], dirs[order]), mask


def wtf_pad(p: PacketSequence, histograms: HistogramConfig, seed) -> PacketSequence:
    return wtf_pad_schedule(p, histograms, seed)[0]


def resolve_histograms(spec: DefenseSpec, fit_source: LabeledDataset | None = None) -> DefenseSpec:
    """Return ``spec`` with WTF-PAD histograms loaded, or fitted if absent."""
    if spec.kind is not DefenseKind.WTFPAD:
        return spec
    h = spec.params.get("histograms")
    if isinstance(h, HistogramConfig):
        return spec
    if isinstance(h, Mapping):
        cfg = HistogramConfig.from_dict(h)
    elif h:
        cfg = HistogramConfig.load(h)
    elif fit_source is not None:
        cfg = fit_histograms(fit_source)
    else:
        raise DefenseConfigError("WTF-PAD needs a histogram config or a dataset to fit one from")
    return DefenseSpec(spec.kind, {"histograms": cfg}, spec.seed)


def pick_decoy(source: LabeledDataset, label: Label | None, rng: np.random.Generator) -> PacketSequence:
    """A uniformly chosen instance of a uniformly chosen page other than ``label``."""
    pages = [y for y in source.distinct_labels if y != label]
    if not pages:
        raise DefenseConfigError("decoy source has no page different from the input's page")
    page = pages[int(rng.integers(len(pages)))]
    candidates = [i for i, y in enumerate(source.labels) if y == page]
    return source.traces[candidates[int(rng.integers(len(candidates)))]]


def apply(
    spec: DefenseSpec,
    p: PacketSequence,
    decoy_source: LabeledDataset | None = None,
    *,
    label: Label | None = None,
    trace_index: int = 0,
) -> PacketSequence:
    """Defend one trace.

    ``label`` is the input's page (Decoy never overlays the same page) and
    ``trace_index`` selects the random stream for probabilistic defenses.
    """
    prm = spec.params
    kind = spec.kind
    if kind is DefenseKind.NONE:
        return p
    if kind is DefenseKind.BUFLO:
        return buflo(p, int(prm["d"]), float(prm["rho"]), float(prm["tau"]))
    if kind is DefenseKind.TAMARAW:
        return tamaraw(p, float(prm["rho_in"]), float(prm["rho_out"]), int(prm["pad_multiple"]), int(prm["d"]))
    if kind is DefenseKind.CSBUFLO:
        return cs_buflo(p, int(prm["d"]), float(prm["rho_min"]), float(prm["rho_max"]), spec.seed)
    rng = trace_rng(spec.seed, trace_index)
    if kind is DefenseKind.DECOY:
        if decoy_source is None:
            raise DefenseConfigError("Decoy needs a decoy source dataset")
        return decoy(p, pick_decoy(decoy_source, label, rng))
    h = prm.get("histograms")
    if not isinstance(h, HistogramConfig):
        spec = resolve_histograms(spec)
        h = spec.params["histograms"]
    return wtf_pad(p, h, rng)
