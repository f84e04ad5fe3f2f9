"""Threshold sweeps over a run of days: one report per value plus a summary table."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Set

from .beacon import AutomatedPair, BeaconParams, detect_automated_pairs
from .events import Event
from .pipeline import DailyReport, DayContext, Detector, make_report, run_bp
from .scoring import Thresholds

SWEEP_PARAMS = ("T_c", "T_score", "J_T")
#: Loops in sweeps get more room than the five iterations used day to day.
SWEEP_MAX_ITERATIONS = 20

SUMMARY_HEADER = "param\tvalue\tcount\tdetected\ttrue_positives\ttdr"


@dataclass
class SweepPoint:
    param: str
    value: float
    count: int
    detected: int = 0
    true_positives: Optional[int] = None
    reports: List[str] = field(default_factory=list)

    @property
    def tdr(self) -> Optional[float]:
        if self.true_positives is None:
            return None
        return self.true_positives / self.detected if self.detected else 0.0

    def row(self) -> str:
        tp = "" if self.true_positives is None else str(self.true_positives)
        tdr = "" if self.tdr is None else f"{self.tdr:.6f}"
        return f"{self.param}\t{self.value:g}\t{self.count}\t{self.detected}\t{tp}\t{tdr}"


def summary_table(points: Sequence[SweepPoint]) -> str:
    return "\n".join([SUMMARY_HEADER] + [p.row() for p in points]) + "\n"


def collect_contexts(detector: Detector, events_by_day: Mapping[int, Sequence[Event]],
                     days: Iterable[int], extra_domains: Optional[Mapping[int, Iterable[str]]] = None) -> List[DayContext]:
    """Analyse each day against the profiles before it, folding days in as we go."""
    extra_domains = extra_domains or {}
    out = []
    for day in sorted(days):
        events = events_by_day.get(day, [])
        out.append(detector.context(events, day, extra_domains.get(day, ())))
        detector.ingest(events, day)
    return out


def _pairs_text(pairs: Sequence[AutomatedPair]) -> str:
    return "".join(f"{p.host}\t{p.domain}\t{p.period:.6f}\t{p.divergence:.6f}\n" for p in pairs)


def sweep(contexts: Sequence[DayContext], param: str, values: Sequence[float], mode: str = "nohint",
          seeds_by_day: Optional[Mapping[int, Iterable[str]]] = None,
          seed_domains_by_day: Optional[Mapping[int, Iterable[str]]] = None,
          malicious: Optional[Set[str]] = None,
          max_iterations: int = SWEEP_MAX_ITERATIONS) -> List[SweepPoint]:
    """Vary one threshold with everything else fixed.

    ``count`` is the size of the set the threshold controls: C&C-flagged
    domains for ``T_c``, domains labeled by the expansion loop for
    ``T_score``, automated (host, domain) pairs for ``J_T``. ``detected`` and
    the true-positive count refer to the final report domains.
    """
    if param not in SWEEP_PARAMS:
        raise ValueError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    seeds_by_day = seeds_by_day or {}
    seed_domains_by_day = seed_domains_by_day or {}
    points = []
    for value in values:
        point = SweepPoint(param, float(value), 0, 0, 0 if malicious is not None else None)
        for ctx in contexts:
            cfg = ctx.config
            if param == "J_T":
                params = BeaconParams(cfg.bin_width_W, float(value), cfg.min_connections)
                pairs = detect_automated_pairs(ctx.rare_events, params, cfg.fold_level)
                point.count += len(pairs)
                point.detected += len({p.domain for p in pairs})
                if malicious is not None:
                    point.true_positives += len({p.domain for p in pairs} & malicious)
                point.reports.append(f"# day={ctx.day} J_T={value:g} automated_pairs={len(pairs)}\n"
                                     + _pairs_text(pairs))
                continue
            T_c = float(value) if param == "T_c" else cfg.cc_score_T_c
            T_score = float(value) if param == "T_score" else cfg.similarity_T_score
            thresholds = Thresholds(T_c, T_score, max_iterations)
            state = run_bp(ctx, mode, seeds_by_day.get(ctx.day, ()), seed_domains_by_day.get(ctx.day, ()),
                           thresholds)
            report = _report(ctx, state, mode, thresholds)
            if param == "T_c":
                point.count += len(ctx.cc_flagged(T_c))
            else:
                point.count += sum(1 for l in state.labels.values() if l.reason != "seed")
            point.detected += len(report.entries)
            if malicious is not None:
                point.true_positives += sum(1 for d in report.domains if d in malicious)
            point.reports.append(report.to_text())
        points.append(point)
    return points


def _report(ctx: DayContext, state, mode: str, thresholds: Thresholds) -> DailyReport:
    report = make_report(ctx, state, mode, ctx.config.report_top_k)
    report.n_cc_flagged = len(ctx.cc_flagged(thresholds.cc_score_T_c))
    return report


def value_range(spec: str) -> List[float]:
    """``"0.40,0.42"`` or ``"start:stop:step"`` (stop inclusive) into a list of floats."""
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        if step <= 0:
            raise ValueError("step must be positive")
        n = int(round((stop - start) / step))
        return [round(start + i * step, 10) for i in range(n + 1)]
    return [float(x) for x in spec.split(",") if x.strip()]


def is_monotone(counts: Sequence[int], increasing: bool) -> bool:
    pairs = zip(counts, counts[1:])
    return all(b >= a for a, b in pairs) if increasing else all(b <= a for a, b in pairs)

