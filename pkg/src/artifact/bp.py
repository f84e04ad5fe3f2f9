"""Iterative expansion of compromised hosts and malicious domains over the host/rare-domain graph.

This is threshold admission rather than sum-product message passing. Each
iteration first looks for C&C-like domains among the candidates; only when none
is found does it admit the single best domain by similarity score, provided the
score clears ``similarity_T_score``. Hosts that contact newly labeled domains
join the compromised set, and their rare domains join the candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from .events import Event
from .profiles import RareSet, fold_domain
from .scoring import Thresholds

REASON_ORDER = {"seed": 0, "cc": 1, "similarity": 2}

DetectCc = Callable[[str], Optional[float]]
ComputeScore = Callable[[str, FrozenSet[str]], float]


@dataclass
class BipartiteIndex:
    dom_host: Dict[str, Set[str]] = field(default_factory=dict)
    host_rdom: Dict[str, Set[str]] = field(default_factory=dict)

    def hosts_of(self, domains: Iterable[str]) -> Set[str]:
        out: Set[str] = set()
        for d in domains:
            out |= self.dom_host.get(d, set())
        return out

    def rare_of(self, hosts: Iterable[str]) -> Set[str]:
        out: Set[str] = set()
        for h in hosts:
            out |= self.host_rdom.get(h, set())
        return out


def build_bipartite_index(day_events: Iterable[Event], rare_set: RareSet, fold_level: int = 2,
                          extra_domains: Iterable[str] = ()) -> BipartiteIndex:
    """Host/domain edges for rare domains (plus any ``extra_domains``, e.g. seed domains)."""
    keep = set(rare_set.domains) | set(extra_domains)
    index = BipartiteIndex()
    for ev in day_events:
        d = fold_domain(ev.domain, fold_level)
        if d not in keep:
            continue
        index.dom_host.setdefault(d, set()).add(ev.host)
        if d in rare_set.domains:
            index.host_rdom.setdefault(ev.host, set()).add(d)
    return index


@dataclass(frozen=True)
class Label:
    domain: str
    iteration: int
    reason: str
    score: float


@dataclass
class BpState:
    H: Set[str]
    M: Set[str]
    R: Set[str]
    labels: Dict[str, Label] = field(default_factory=dict)
    iterations: int = 0
    # per iteration snapshots of (H, M), index 0 is the seed state
    history: List[Tuple[FrozenSet[str], FrozenSet[str]]] = field(default_factory=list)

    def ordered_labels(self, include_seeds: bool = True) -> List[Label]:
        labels = [l for l in self.labels.values() if include_seeds or l.reason != "seed"]
        return sorted(labels, key=lambda l: (l.iteration, REASON_ORDER[l.reason], -l.score, l.domain))


def belief_propagation(index: BipartiteIndex, seeds_H: Iterable[str], seeds_M: Iterable[str],
                       detect_cc: DetectCc, compute_score: ComputeScore,
                       thresholds: Thresholds = Thresholds(),
                       seed_scores: Optional[Mapping[str, float]] = None) -> BpState:
    """Run the expansion loop from the given seeds.

    ``detect_cc(domain)`` returns the detector score when the domain is
    C&C-like and ``None`` otherwise. ``compute_score(domain, M)`` returns the
    similarity of ``domain`` to the current malicious set ``M``.
    """
    seed_scores = seed_scores or {}
    H = set(seeds_H)
    M = set(seeds_M)
    H |= index.hosts_of(M)
    R = index.rare_of(H)
    state = BpState(H, M, R)
    for d in sorted(M):
        state.labels[d] = Label(d, 0, "seed", float(seed_scores.get(d, 0.0)))
    state.history.append((frozenset(H), frozenset(M)))

    for it in range(1, thresholds.max_iterations + 1):
        state.iterations = it
        candidates = sorted(R - M)
        new: Dict[str, Label] = {}
        for d in candidates:
            s = detect_cc(d)
            if s is not None:
                new[d] = Label(d, it, "cc", float(s))
        if not new and candidates:
            frozen_m = frozenset(M)
            best: Optional[Tuple[float, str]] = None
            for d in candidates:
                s = float(compute_score(d, frozen_m))
                # ties resolve to the lexicographically smallest domain
                if best is None or s > best[0]:
                    best = (s, d)
            if best is not None and best[0] >= thresholds.similarity_T_score:
                new[best[1]] = Label(best[1], it, "similarity", best[0])
        if not new:
            break
        M |= set(new)
        state.labels.update(new)
        H |= index.hosts_of(new)
        R = index.rare_of(H)
        state.R = R
        state.history.append((frozenset(H), frozenset(M)))
    return state
