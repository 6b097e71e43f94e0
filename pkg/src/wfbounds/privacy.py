"""Random-guessing error, advantage, (epsilon, Phi)-privacy and overheads."""

from __future__ import annotations

import math
import statistics
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

from .trace_model import PacketSequence


class PrivacyWarning(UserWarning):
    """An estimated error exceeded random guessing and was clamped."""


def random_guess_error(L: int) -> float:
    if L < 2:
        raise ValueError("need at least two labels")
    return (L - 1) / L


def advantage(r: float, L: int) -> float:
    g = random_guess_error(L)
    return abs(g - r) / g


def epsilon_privacy(r_star: float, L: int) -> float:
    """``r_star / R_G``; errors above random guessing clamp to 1 with a warning."""
    g = random_guess_error(L)
    if r_star > g:
        warnings.warn(
            f"estimated error {r_star:.6g} exceeds random guessing {g:.6g}; clamping",
            PrivacyWarning,
            stacklevel=2,
        )
        r_star = g
    return r_star / g


@dataclass(frozen=True)
class PrivacyReport:
    r_star_lower: float
    label_count: int
    r_guess: float
    advantage: float
    epsilon: float
    feature_schema: str

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def epsilon_display(self) -> str:
        return f"({self.epsilon:.2f}, {self.feature_schema})"


def privacy_report(r_star_lower: float, L: int, feature_schema: str) -> PrivacyReport:
    eps = epsilon_privacy(r_star_lower, L)
    g = random_guess_error(L)
    return PrivacyReport(
        r_star_lower=r_star_lower,
        label_count=L,
        r_guess=g,
        advantage=advantage(min(r_star_lower, g), L),
        epsilon=eps,
        feature_schema=feature_schema,
    )


def packet_overhead(p: PacketSequence, p_def: PacketSequence) -> float:
    """Extra packets in percent: ``(|D(p)| / |p| - 1) * 100``."""
    return (len(p_def) / len(p) - 1.0) * 100.0


def time_overhead(p: PacketSequence, p_def: PacketSequence) -> float:
    """Extra duration in percent, defended over original.

    A zero-duration original gives 0 if the defended trace is also
    instantaneous and ``inf`` (unbounded) otherwise.
    """
    before, after = p.duration, p_def.duration
    if before == 0:
        return 0.0 if after == 0 else math.inf
    return (after / before - 1.0) * 100.0


@dataclass(frozen=True)
class OverheadReport:
    packet_overhead_pct: float
    time_overhead_pct: float
    per_trace_packet: tuple[float, ...]
    per_trace_time: tuple[float, ...]
    unbounded_time: int

    def to_dict(self, per_trace: bool = False) -> dict:
        d = {
            "packet_overhead_pct": self.packet_overhead_pct,
            "time_overhead_pct": self.time_overhead_pct,
            "unbounded_time": self.unbounded_time,
            "traces": len(self.per_trace_packet),
        }
        if per_trace:
            d["per_trace_packet"] = list(self.per_trace_packet)
            d["per_trace_time"] = [None if math.isinf(t) else t for t in self.per_trace_time]
        return d


def _median(values: list[float]) -> float:
    return statistics.median(sorted(values)) if values else math.nan


def median_overheads(originals: Sequence[PacketSequence], defendeds: Sequence[PacketSequence]) -> OverheadReport:
    """Per-trace overheads and their medians; unbounded time overheads are excluded."""
    if len(originals) != len(defendeds):
        raise ValueError("originals and defended traces must be aligned")
    if not originals:
        raise ValueError("need at least one trace")
    pkt = [packet_overhead(p, q) for p, q in zip(originals, defendeds)]
    tim = [time_overhead(p, q) for p, q in zip(originals, defendeds)]
    finite = [t for t in tim if math.isfinite(t)]
    return OverheadReport(
        packet_overhead_pct=_median(pkt),
        time_overhead_pct=_median(finite),
        per_trace_packet=tuple(pkt),
        per_trace_time=tuple(tim),
        unbounded_time=len(tim) - len(finite),
    )
