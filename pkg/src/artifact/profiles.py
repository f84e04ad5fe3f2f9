"""Data reduction and incremental profiles of external destinations and user agents.

Histories keep the day each entry was first observed, so the state "as of the
start of day N" can always be recovered. That makes re-running a day against
its pre-day view safe even after the day has been folded in.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .events import Event

DEFAULT_FOLD_LEVEL = 2
ANONYMIZED_FOLD_LEVEL = 3
DEFAULT_RARE_HOST_THRESHOLD = 10
DEFAULT_UA_RARE_THRESHOLD = 10

DOMAIN_FIRST_SEEN_FILE = "domains_first_seen.tsv"
DOMAIN_DAY_HOSTS_FILE = "domains_day_hosts.tsv"
UA_HOSTS_FILE = "ua_hosts.tsv"
META_FILE = "meta.tsv"


class HistoryOrderError(ValueError):
    """Raised when a day is ingested out of order."""


def fold_domain(domain: str, fold_level: int = DEFAULT_FOLD_LEVEL) -> str:
    """Keep the last ``fold_level`` labels: ``news.nbc.com`` -> ``nbc.com``."""
    if fold_level < 2:
        raise ValueError("fold_level must be at least 2")
    labels = domain.split(".")
    if len(labels) <= fold_level:
        return domain
    return ".".join(labels[-fold_level:])


def is_internal(domain: str, internal_suffixes: Iterable[str]) -> bool:
    for suffix in internal_suffixes:
        suffix = suffix.lower().strip(".")
        if domain == suffix or domain.endswith("." + suffix):
            return True
    return False


def reduce_events(events: Iterable[Event], internal_suffixes: Sequence[str] = (),
                  excluded_hosts: Iterable[str] = ()) -> List[Event]:
    """Drop traffic to internal resources and traffic initiated by excluded (server) hosts."""
    excluded = set(excluded_hosts)
    return [ev for ev in events
            if ev.host not in excluded and not is_internal(ev.domain, internal_suffixes)]


def distinct_hosts_by_domain(events: Iterable[Event], fold_level: int) -> Dict[str, Set[str]]:
    out: Dict[str, Set[str]] = {}
    for ev in events:
        out.setdefault(fold_domain(ev.domain, fold_level), set()).add(ev.host)
    return out


@dataclass
class DomainHistory:
    first_seen: Dict[str, int] = field(default_factory=dict)
    day_hosts: Dict[Tuple[str, int], int] = field(default_factory=dict)
    last_day: Optional[int] = None

    def is_new(self, domain: str, day: int) -> bool:
        first = self.first_seen.get(domain)
        return first is None or first >= day

    def as_of(self, day: int) -> "DomainHistory":
        """The history as it stood before ``day`` was ingested."""
        last = None
        if self.last_day is not None:
            last = min(self.last_day, day - 1)
        return DomainHistory(
            {d: s for d, s in self.first_seen.items() if s < day},
            {k: n for k, n in self.day_hosts.items() if k[1] < day},
            last,
        )


def update_history(history: DomainHistory, events: Iterable[Event], day: int,
                   fold_level: int = DEFAULT_FOLD_LEVEL) -> DomainHistory:
    """Fold one day's events into the destination history (in place; also returned)."""
    if history.last_day is not None and day <= history.last_day:
        raise HistoryOrderError(f"day {day} is not after last ingested day {history.last_day}")
    events = list(events)
    for ev in events:
        if ev.day != day:
            raise ValueError(f"event at {ev.timestamp} is not on day {day}")
    for domain, hosts in distinct_hosts_by_domain(events, fold_level).items():
        history.first_seen.setdefault(domain, day)
        history.day_hosts[(domain, day)] = len(hosts)
    history.last_day = day
    return history


@dataclass
class RareSet:
    day: int
    domains: Set[str] = field(default_factory=set)

    def __contains__(self, domain: str) -> bool:
        return domain in self.domains

    def __len__(self) -> int:
        return len(self.domains)


def compute_rare_set(history: DomainHistory, day_events: Iterable[Event], day: int,
                     rare_host_threshold: int = DEFAULT_RARE_HOST_THRESHOLD,
                     fold_level: int = DEFAULT_FOLD_LEVEL) -> RareSet:
    """Folded domains that are new as of ``day`` and seen from fewer than the threshold of hosts."""
    rare = {
        d for d, hosts in distinct_hosts_by_domain(day_events, fold_level).items()
        if history.is_new(d, day) and len(hosts) < rare_host_threshold
    }
    return RareSet(day, rare)


def rare_events(events: Iterable[Event], rare_set: RareSet, fold_level: int) -> List[Event]:
    return [ev for ev in events if fold_domain(ev.domain, fold_level) in rare_set.domains]


@dataclass
class UaHistory:
    # ua -> {host: first day that host used the ua}
    ua_hosts: Dict[str, Dict[str, int]] = field(default_factory=dict)
    last_day: Optional[int] = None

    @property
    def first_seen(self) -> Dict[str, int]:
        return {ua: min(hosts.values()) for ua, hosts in self.ua_hosts.items() if hosts}

    def host_count(self, ua: str, before_day: Optional[int] = None) -> int:
        hosts = self.ua_hosts.get(ua)
        if not hosts:
            return 0
        if before_day is None:
            return len(hosts)
        return sum(1 for d in hosts.values() if d < before_day)

    def update(self, events: Iterable[Event], day: int) -> "UaHistory":
        if self.last_day is not None and day <= self.last_day:
            raise HistoryOrderError(f"day {day} is not after last ingested day {self.last_day}")
        for ev in events:
            if ev.user_agent:
                self.ua_hosts.setdefault(ev.user_agent, {}).setdefault(ev.host, day)
        self.last_day = day
        return self

    def as_of(self, day: int) -> "UaHistory":
        ua_hosts = {}
        for ua, hosts in self.ua_hosts.items():
            kept = {h: d for h, d in hosts.items() if d < day}
            if kept:
                ua_hosts[ua] = kept
        last = None if self.last_day is None else min(self.last_day, day - 1)
        return UaHistory(ua_hosts, last)


def ua_is_rare(ua_history: UaHistory, ua: Optional[str],
               ua_rare_threshold: int = DEFAULT_UA_RARE_THRESHOLD) -> bool:
    """An absent UA counts as rare, as does one used by fewer than the threshold of hosts."""
    if not ua:
        return True
    return ua_history.host_count(ua) < ua_rare_threshold


# -- snapshots --------------------------------------------------------------

def _atomic_write(path: Path, lines: Iterable[str]) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    os.replace(tmp, path)


def save_histories(directory, history: DomainHistory, ua_history: Optional[UaHistory] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _atomic_write(d / DOMAIN_FIRST_SEEN_FILE,
                  (f"{dom}\t{day}" for dom, day in sorted(history.first_seen.items())))
    _atomic_write(d / DOMAIN_DAY_HOSTS_FILE,
                  (f"{dom}\t{day}\t{n}" for (dom, day), n in sorted(history.day_hosts.items())))
    ua_history = ua_history or UaHistory()
    _atomic_write(d / UA_HOSTS_FILE,
                  (f"{ua}\t{host}\t{day}"
                   for ua in sorted(ua_history.ua_hosts)
                   for host, day in sorted(ua_history.ua_hosts[ua].items())))
    meta = [f"domains_last_day\t{'' if history.last_day is None else history.last_day}",
            f"ua_last_day\t{'' if ua_history.last_day is None else ua_history.last_day}"]
    _atomic_write(d / META_FILE, meta)


def _rows(path: Path, width: int):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise ValueError(f"{path.name}:{lineno}: expected {width} fields")
            yield parts


def load_histories(directory) -> Tuple[DomainHistory, UaHistory]:
    d = Path(directory)
    if not (d / DOMAIN_FIRST_SEEN_FILE).exists():
        raise FileNotFoundError(f"no history snapshot in {d}")
    history = DomainHistory()
    for dom, day in _rows(d / DOMAIN_FIRST_SEEN_FILE, 2):
        history.first_seen[dom] = int(day)
    for dom, day, n in _rows(d / DOMAIN_DAY_HOSTS_FILE, 3):
        history.day_hosts[(dom, int(day))] = int(n)
    ua_history = UaHistory()
    if (d / UA_HOSTS_FILE).exists():
        for ua, host, day in _rows(d / UA_HOSTS_FILE, 3):
            ua_history.ua_hosts.setdefault(ua, {})[host] = int(day)
    if (d / META_FILE).exists():
        for key, value in _rows(d / META_FILE, 2):
            if key == "domains_last_day" and value:
                history.last_day = int(value)
            elif key == "ua_last_day" and value:
                ua_history.last_day = int(value)
    return history, ua_history
