"""Per-domain feature extraction for C&C scoring and for domain similarity."""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

from .beacon import AutomatedPair
from .events import Event
from .profiles import UaHistory, fold_domain, ua_is_rare

EPOCH = dt.date(1970, 1, 1)
#: Stand-in for "no host visited both domains"; keeps the feature bounded.
NO_GAP_SENTINEL_S = 86400.0

CC_FEATURES = (
    "no_hosts",
    "no_auto_hosts",
    "frac_no_referer",
    "frac_rare_ua",
    "domain_age_days",
    "domain_validity_days",
)
SIMILARITY_FEATURES = (
    "no_hosts",
    "min_time_gap_s",
    "same_ip24",
    "same_ip16",
    "frac_no_referer",
    "frac_rare_ua",
    "domain_age_days",
    "domain_validity_days",
)
#: Features that only exist for HTTP proxy data with registration lookups.
HTTP_ONLY_FEATURES = ("frac_no_referer", "frac_rare_ua", "domain_age_days", "domain_validity_days")
WHOIS_FEATURES = ("domain_age_days", "domain_validity_days")


def day_date(day: int) -> dt.date:
    return EPOCH + dt.timedelta(days=day)


@dataclass(frozen=True)
class WhoisRecord:
    created: dt.date
    expires: dt.date

    def __post_init__(self):
        if self.created > self.expires:
            raise ValueError("registration expires before it was created")


class WhoisDb:
    """Offline registration lookup keyed by folded domain."""

    def __init__(self, records: Optional[Mapping[str, WhoisRecord]] = None):
        self.records: Dict[str, WhoisRecord] = dict(records or {})

    def get(self, domain: str) -> Optional[WhoisRecord]:
        return self.records.get(domain)

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def load(cls, path) -> "WhoisDb":
        records = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                try:
                    domain, created, expires = line.split("\t")
                    records[domain.lower()] = WhoisRecord(dt.date.fromisoformat(created),
                                                          dt.date.fromisoformat(expires))
                except ValueError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc}") from exc
        return cls(records)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for domain in sorted(self.records):
                r = self.records[domain]
                fh.write(f"{domain}\t{r.created.isoformat()}\t{r.expires.isoformat()}\n")


def whois_age_validity(domain: str, whois: Optional[WhoisDb], day: int,
                       defaults: Optional[Mapping[str, float]] = None) -> Tuple[Optional[float], Optional[float]]:
    """Days since registration and days until expiry, clamped at zero.

    A miss falls back to ``defaults``; with no default the value is ``None``.
    """
    rec = whois.get(domain) if whois is not None else None
    if rec is None:
        defaults = defaults or {}
        return defaults.get("domain_age_days"), defaults.get("domain_validity_days")
    today = day_date(day)
    return float(max((today - rec.created).days, 0)), float(max((rec.expires - today).days, 0))


def whois_defaults(domains_by_day: Iterable[Tuple[str, int]], whois: Optional[WhoisDb]) -> Dict[str, float]:
    """Mean age and validity over the given (domain, day) observations that have a record."""
    ages: List[float] = []
    vals: List[float] = []
    for domain, day in domains_by_day:
        age, val = whois_age_validity(domain, whois, day)
        if age is not None:
            ages.append(age)
            vals.append(val)
    if not ages:
        return {"domain_age_days": 0.0, "domain_validity_days": 0.0}
    return {"domain_age_days": sum(ages) / len(ages), "domain_validity_days": sum(vals) / len(vals)}


class DayIndex:
    """Lookup tables over one day's (folded) events."""

    def __init__(self, events: Iterable[Event], day: int, fold_level: int = 2,
                 ua_history: Optional[UaHistory] = None, ua_rare_threshold: int = 10):
        self.day = day
        self.fold_level = fold_level
        self.hosts: Dict[str, Set[str]] = {}
        self.domains_by_host: Dict[str, Set[str]] = {}
        self.first_visit: Dict[Tuple[str, str], int] = {}
        self.ips: Dict[str, Set[str]] = {}
        self.http = False
        # (domain, host) -> [saw a connection with referer, saw a no/rare-UA connection]
        self._web: Dict[Tuple[str, str], List[bool]] = {}
        ua_history = ua_history if ua_history is not None else UaHistory()
        rare_cache: Dict[Optional[str], bool] = {}
        for ev in events:
            d = fold_domain(ev.domain, fold_level)
            h = ev.host
            self.hosts.setdefault(d, set()).add(h)
            self.domains_by_host.setdefault(h, set()).add(d)
            key = (h, d)
            prev = self.first_visit.get(key)
            if prev is None or ev.timestamp < prev:
                self.first_visit[key] = ev.timestamp
            if ev.dest_ip:
                self.ips.setdefault(d, set()).add(ev.dest_ip)
            if ev.source == "http":
                self.http = True
                flags = self._web.setdefault((d, h), [False, False])
                if ev.referer_present:
                    flags[0] = True
                rare = rare_cache.get(ev.user_agent)
                if rare is None:
                    rare = ua_is_rare(ua_history, ev.user_agent, ua_rare_threshold)
                    rare_cache[ev.user_agent] = rare
                if rare:
                    flags[1] = True

    def no_hosts(self, domain: str) -> int:
        return len(self.hosts.get(domain, ()))

    def frac_no_referer(self, domain: str) -> float:
        """Fraction of contacting hosts none of whose connections carried a referer."""
        hosts = self.hosts.get(domain, ())
        if not hosts or not self.http:
            return 0.0
        n = sum(1 for h in hosts if not self._web.get((domain, h), [True, False])[0])
        return n / len(hosts)

    def frac_rare_ua(self, domain: str) -> float:
        """Fraction of contacting hosts that used no UA or a rare UA at least once."""
        hosts = self.hosts.get(domain, ())
        if not hosts or not self.http:
            return 0.0
        n = sum(1 for h in hosts if self._web.get((domain, h), [False, False])[1])
        return n / len(hosts)


@dataclass(frozen=True)
class CcFeatures:
    no_hosts: int
    no_auto_hosts: int
    frac_no_referer: float
    frac_rare_ua: float
    domain_age_days: Optional[float]
    domain_validity_days: Optional[float]

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {k: None if v is None else float(v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SimilarityFeatures:
    no_hosts: int
    min_time_gap_s: float
    same_ip24: bool
    same_ip16: bool
    frac_no_referer: float
    frac_rare_ua: float
    domain_age_days: Optional[float]
    domain_validity_days: Optional[float]

    @property
    def ip_proximity(self) -> str:
        if self.same_ip24:
            return "ip24"
        if self.same_ip16:
            return "ip16"
        return "none"

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {k: None if v is None else float(v) for k, v in asdict(self).items()}


def _registration(domain, index: DayIndex, whois, day, defaults):
    # DNS-only data has no registration lookups; misses without a default stay None
    if not index.http:
        return 0.0, 0.0
    return whois_age_validity(domain, whois, day, defaults)


def extract_cc_features(domain: str, index: DayIndex, auto_pairs: Iterable[AutomatedPair],
                        whois: Optional[WhoisDb] = None, day: Optional[int] = None,
                        whois_default: Optional[Mapping[str, float]] = None) -> CcFeatures:
    day = index.day if day is None else day
    auto_hosts = {p.host for p in auto_pairs if p.domain == domain}
    age, val = _registration(domain, index, whois, day, whois_default)
    return CcFeatures(
        no_hosts=index.no_hosts(domain),
        no_auto_hosts=len(auto_hosts),
        frac_no_referer=index.frac_no_referer(domain),
        frac_rare_ua=index.frac_rare_ua(domain),
        domain_age_days=age,
        domain_validity_days=val,
    )


def _prefix(ip: str, octets: int) -> Optional[str]:
    parts = ip.split(".")
    if len(parts) != 4:
        return None
    return ".".join(parts[:octets])


def min_time_gap(domain: str, labeled: Iterable[str], index: DayIndex) -> float:
    """Smallest first-visit gap, over shared hosts, between ``domain`` and any labeled domain."""
    labeled = set(labeled)
    best = math.inf
    for h in index.hosts.get(domain, ()):
        t = index.first_visit[(h, domain)]
        for other in index.domains_by_host.get(h, ()) & labeled:
            if other == domain:
                continue
            best = min(best, abs(t - index.first_visit[(h, other)]))
    return min(best, NO_GAP_SENTINEL_S)


def ip_proximity(domain: str, labeled: Iterable[str], index: DayIndex) -> Tuple[bool, bool]:
    mine = index.ips.get(domain, set())
    p24: Set[str] = set()
    p16: Set[str] = set()
    for other in labeled:
        if other == domain:
            continue
        for ip in index.ips.get(other, ()):
            a, b = _prefix(ip, 3), _prefix(ip, 2)
            if a:
                p24.add(a)
                p16.add(b)
    same24 = any(_prefix(ip, 3) in p24 for ip in mine)
    same16 = same24 or any(_prefix(ip, 2) in p16 for ip in mine)
    return same24, same16


def extract_similarity_features(domain: str, labeled_set: Iterable[str], index: DayIndex,
                                whois: Optional[WhoisDb] = None, day: Optional[int] = None,
                                whois_default: Optional[Mapping[str, float]] = None) -> SimilarityFeatures:
    day = index.day if day is None else day
    labeled = set(labeled_set)
    same24, same16 = ip_proximity(domain, labeled, index)
    age, val = _registration(domain, index, whois, day, whois_default)
    return SimilarityFeatures(
        no_hosts=index.no_hosts(domain),
        min_time_gap_s=min_time_gap(domain, labeled, index),
        same_ip24=same24,
        same_ip16=same16,
        frac_no_referer=index.frac_no_referer(domain),
        frac_rare_ua=index.frac_rare_ua(domain),
        domain_age_days=age,
        domain_validity_days=val,
    )
