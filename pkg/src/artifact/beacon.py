"""Automated-connection detection with dynamic interval histograms.

Inter-connection intervals for one (host, domain, day) are clustered around
"hubs": the first interval founds a cluster, and each later interval joins the
first cluster whose hub lies within ``W`` seconds, or founds a new one. The
resulting histogram is compared with a single-bin periodic histogram at the
most frequent hub using the Jeffrey divergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .events import Event
from .profiles import fold_domain


@dataclass(frozen=True)
class IntervalHistogram:
    bins: Tuple[Tuple[float, float], ...]  # (hub seconds, frequency)
    total_intervals: int = 0

    def as_dict(self) -> Dict[float, float]:
        return dict(self.bins)

    @classmethod
    def from_dict(cls, freqs: Dict[float, float], total: int = 0) -> "IntervalHistogram":
        return cls(tuple(freqs.items()), total)


@dataclass(frozen=True)
class BeaconParams:
    bin_width_W: float = 10.0
    jeffrey_threshold_J_T: float = 0.06
    min_connections: int = 4

    def __post_init__(self):
        if self.bin_width_W <= 0:
            raise ValueError("bin width must be positive")
        if self.jeffrey_threshold_J_T < 0:
            raise ValueError("divergence threshold must be non-negative")
        if self.min_connections < 3:
            raise ValueError("min_connections must be at least 3")


@dataclass(frozen=True)
class BeaconResult:
    automated: bool
    histogram: Optional[IntervalHistogram]
    period: Optional[float]
    divergence: Optional[float]


@dataclass(frozen=True)
class AutomatedPair:
    host: str
    domain: str
    period: float
    divergence: float
    first_ts: int
    n_connections: int


def extract_intervals(timestamps: Sequence[int]) -> List[int]:
    """Successive differences of sorted timestamps (empty for fewer than two)."""
    return [b - a for a, b in zip(timestamps, timestamps[1:])]


def cluster_intervals(intervals: Sequence[float], W: float) -> IntervalHistogram:
    if not intervals:
        raise ValueError("no intervals to cluster")
    if W <= 0:
        raise ValueError("bin width must be positive")
    hubs: List[float] = []
    counts: List[int] = []
    for t in intervals:
        for i, hub in enumerate(hubs):
            if abs(t - hub) <= W:
                counts[i] += 1
                break
        else:
            hubs.append(t)
            counts.append(1)
    n = len(intervals)
    return IntervalHistogram(tuple((h, c / n) for h, c in zip(hubs, counts)), n)


def periodic_reference(hist: IntervalHistogram) -> IntervalHistogram:
    """One-bin histogram at the most frequent hub; ties go to the smaller hub."""
    if not hist.bins:
        raise ValueError("empty histogram")
    hub, _ = min(hist.bins, key=lambda b: (-b[1], b[0]))
    return IntervalHistogram(((hub, 1.0),), hist.total_intervals)


def _xlogx_over(x: float, m: float) -> float:
    return x * math.log(x / m) if x > 0 else 0.0


def jeffrey_divergence(H: IntervalHistogram, K: IntervalHistogram) -> float:
    """Symmetric divergence over the union of hubs (natural log, 0 log 0 = 0)."""
    h = H.as_dict()
    k = K.as_dict()
    total = 0.0
    # fixed summation order keeps d(H, K) == d(K, H) bit for bit
    for hub in sorted(set(h) | set(k)):
        hi = h.get(hub, 0.0)
        ki = k.get(hub, 0.0)
        m = (hi + ki) / 2.0
        if m > 0:
            total += _xlogx_over(hi, m) + _xlogx_over(ki, m)
    # rounding can push an identical pair a hair below zero
    return max(total, 0.0)


def is_automated(timestamps: Sequence[int], params: BeaconParams = BeaconParams()) -> BeaconResult:
    """Label one (host, domain, day) channel from its sorted connection timestamps."""
    intervals = extract_intervals(timestamps)
    if not intervals or len(intervals) < params.min_connections - 1:
        return BeaconResult(False, None, None, None)
    hist = cluster_intervals(intervals, params.bin_width_W)
    ref = periodic_reference(hist)
    d = jeffrey_divergence(hist, ref)
    return BeaconResult(d <= params.jeffrey_threshold_J_T, hist, ref.bins[0][0], d)


def channel_timestamps(events: Iterable[Event], fold_level: int) -> Dict[Tuple[str, str, int], List[int]]:
    """Sorted timestamps per (host, folded domain, day)."""
    groups: Dict[Tuple[str, str, int], List[int]] = {}
    for ev in events:
        key = (ev.host, fold_domain(ev.domain, fold_level), ev.day)
        groups.setdefault(key, []).append(ev.timestamp)
    for ts in groups.values():
        ts.sort()
    return groups


def detect_automated_pairs(events: Iterable[Event], params: BeaconParams = BeaconParams(),
                           fold_level: int = 2) -> List[AutomatedPair]:
    """All automated (host, domain) channels in ``events``, sorted by (host, domain)."""
    found = []
    for (host, domain, _day), ts in sorted(channel_timestamps(events, fold_level).items()):
        res = is_automated(ts, params)
        if res.automated:
            found.append(AutomatedPair(host, domain, res.period, res.divergence, ts[0], len(ts)))
    return found
