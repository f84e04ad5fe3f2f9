"""Deterministic synthetic enterprise traffic with planted infection campaigns.

Benign hosts browse a Zipf-weighted pool of popular sites plus a trickle of
never-seen-before domains, with heavy-tailed (lognormal) gaps between
connections. Benign auto-updaters add genuinely periodic but benign rare
traffic. Each planted campaign makes a few hosts visit several
attacker-controlled delivery domains in quick succession and then beacon to a
C&C domain at a jittered fixed period for the rest of the day.
"""

from __future__ import annotations

import datetime as dt
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .events import SECONDS_PER_DAY, Event, HostMap, format_event_line
from .features import WhoisDb, WhoisRecord, day_date

DEFAULT_START_DAY = 16071  # 2014-01-01
LEASE_DAYS = 7

EVENTS_FILE = "events.tsv"
WHOIS_FILE = "whois.tsv"
HOSTMAP_FILE = "hostmap.tsv"
TRUTH_FILE = "truth.tsv"
SEEDS_FILE = "seeds.tsv"

_LETTERS = np.array(list(string.ascii_lowercase))
_TLDS = ("com", "net", "org", "info", "biz", "ru", "cn", "de")


class SpecError(ValueError):
    """Simulator specification violates its invariants."""


@dataclass
class BenignSpec:
    n_hosts: int = 200
    days: int = 30
    start_day: int = DEFAULT_START_DAY
    domains_popular: int = 400
    domains_rare_per_day: int = 60
    inter_arrival_model: str = "lognormal"
    gap_median_s: float = 45.0
    gap_sigma: float = 1.2  # lognormal shape; CV = sqrt(exp(sigma^2) - 1)
    visits_per_host_day: float = 8.0
    connections_per_visit: float = 2.5
    ua_popular: int = 8
    ua_rare: int = 40
    rare_software_host_frac: float = 0.1
    referer_presence_prob: float = 0.85
    updaters_per_day: int = 3
    whois_miss_prob: float = 0.1
    dialect: str = "http"

    def validate(self) -> None:
        for name in ("referer_presence_prob", "rare_software_host_frac", "whois_miss_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{name} must be a probability, got {v}")
        for name in ("n_hosts", "days", "domains_popular", "domains_rare_per_day",
                     "ua_popular", "ua_rare", "updaters_per_day"):
            if getattr(self, name) < 0:
                raise SpecError(f"{name} must be non-negative")
        if self.n_hosts < 1 or self.days < 1 or self.ua_popular < 1:
            raise SpecError("need at least one host, one day and one popular UA")
        if self.inter_arrival_model not in ("lognormal", "exponential"):
            raise SpecError(f"unknown inter-arrival model {self.inter_arrival_model!r}")
        if self.dialect not in ("http", "dns"):
            raise SpecError(f"unknown dialect {self.dialect!r}")
        if self.gap_median_s <= 0 or self.gap_sigma <= 0:
            raise SpecError("gap parameters must be positive")

    @property
    def host_ids(self) -> List[str]:
        return [f"host{i:04d}" for i in range(self.n_hosts)]


@dataclass
class CampaignSpec:
    campaign_id: str
    day: int  # absolute day index
    hosts: List[str]
    delivery_domains: int
    cc_domain: str
    cc_period_s: float
    cc_jitter_s: float
    stage_gap_max_s: float = 160.0
    shared_subnet: str = "185.10.20"
    whois_age_days: int = 20
    whois_validity_days: int = 345
    start_s: int = 9 * 3600  # infection time of the first host, seconds into the day
    host_stagger_s: int = 3600
    cc_user_agent: Optional[str] = None
    delivery_referer_prob: float = 0.3
    delivery_names: List[str] = field(default_factory=list)

    def validate(self, benign: BenignSpec, rare_host_threshold: int = 10) -> None:
        if not self.hosts:
            raise SpecError(f"{self.campaign_id}: no hosts")
        if len(set(self.hosts)) >= rare_host_threshold:
            raise SpecError(f"{self.campaign_id}: campaign domains would not be rare")
        known = set(benign.host_ids)
        missing = [h for h in self.hosts if h not in known]
        if missing:
            raise SpecError(f"{self.campaign_id}: unknown hosts {missing}")
        if not 0 <= self.cc_jitter_s < self.cc_period_s:
            raise SpecError(f"{self.campaign_id}: jitter must be below the period")
        if self.stage_gap_max_s <= 5:
            raise SpecError(f"{self.campaign_id}: stage gap too small")
        if not benign.start_day <= self.day < benign.start_day + benign.days:
            raise SpecError(f"{self.campaign_id}: day {self.day} outside the trace")
        if self.delivery_domains < 0:
            raise SpecError(f"{self.campaign_id}: negative delivery domain count")
        if self.delivery_names and len(self.delivery_names) != self.delivery_domains:
            raise SpecError(f"{self.campaign_id}: delivery_names length mismatch")
        if len(self.shared_subnet.split(".")) != 3:
            raise SpecError(f"{self.campaign_id}: shared_subnet must be a /24 prefix like 185.10.20")
        if self.whois_age_days < 0 or self.whois_validity_days < 0:
            raise SpecError(f"{self.campaign_id}: negative registration period")
        if not 0.0 <= self.delivery_referer_prob <= 1.0:
            raise SpecError(f"{self.campaign_id}: delivery_referer_prob must be a probability")
        if not 0 <= self.start_s < SECONDS_PER_DAY:
            raise SpecError(f"{self.campaign_id}: start_s outside the day")


@dataclass
class Trace:
    events: List[Event]
    truth_domains: List[Tuple[str, str, str]]  # (domain, campaign_id, stage)
    truth_hosts: List[Tuple[str, str]]  # (host, campaign_id)
    whois: WhoisDb
    host_map: HostMap
    hints: List[Tuple[int, str, str]]  # (day, hint host, campaign_id)
    campaign_days: Dict[str, int] = field(default_factory=dict)
    hosts: List[str] = field(default_factory=list)
    start_day: int = DEFAULT_START_DAY

    @property
    def malicious_domains(self) -> Set[str]:
        return {d for d, _, _ in self.truth_domains}

    def malicious_on(self, day: int) -> Set[str]:
        return {d for d, cid, _ in self.truth_domains if self.campaign_days.get(cid) == day}

    def domain_labels(self) -> Dict[str, int]:
        return {d: 1 for d in self.malicious_domains}


class _Names:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.used: Set[str] = set()

    def fresh(self, tld: Optional[str] = None, length: Tuple[int, int] = (6, 12)) -> str:
        while True:
            n = int(self.rng.integers(length[0], length[1] + 1))
            label = "".join(self.rng.choice(_LETTERS, n))
            t = tld or _TLDS[int(self.rng.integers(len(_TLDS)))]
            name = f"{label}.{t}"
            if name not in self.used:
                self.used.add(name)
                return name


class _Ips:
    def __init__(self, rng: np.random.Generator, reserved24: Set[str]):
        self.rng = rng
        self.reserved24 = reserved24

    def benign(self) -> str:
        while True:
            a = int(self.rng.integers(11, 200))
            b, c, d = (int(x) for x in self.rng.integers(0, 256, 3))
            if a == 127 or f"{a}.{b}.{c}" in self.reserved24:
                continue
            return f"{a}.{b}.{c}.{d}"


def host_ip(host_index: int, ts: int, start_day: int) -> str:
    """DHCP-style address of a host at ``ts``: leases rotate every week."""
    lease = max(ts // SECONDS_PER_DAY - start_day, 0) // LEASE_DAYS
    return f"10.{lease % 250}.{host_index // 250}.{host_index % 250 + 1}"


def _gaps(rng: np.random.Generator, spec: BenignSpec, n: int) -> np.ndarray:
    if spec.inter_arrival_model == "lognormal":
        g = rng.lognormal(np.log(spec.gap_median_s), spec.gap_sigma, n)
    else:
        g = rng.exponential(spec.gap_median_s, n)
    return np.maximum(np.rint(g), 1).astype(np.int64)


def generate_trace(benign: BenignSpec, campaigns: Sequence[CampaignSpec] = (),
                   rng_seed: int = 0) -> Trace:
    """Build a full synthetic trace; identical arguments give identical traces."""
    benign.validate()
    for c in campaigns:
        c.validate(benign)
    ids = [c.campaign_id for c in campaigns]
    if len(set(ids)) != len(ids):
        raise SpecError("duplicate campaign ids")

    rng = np.random.default_rng(rng_seed)
    names = _Names(rng)
    for c in campaigns:
        names.used.add(c.cc_domain)
        names.used.update(c.delivery_names)
    ips = _Ips(rng, {c.shared_subnet for c in campaigns})
    whois: Dict[str, WhoisRecord] = {}
    http = benign.dialect == "http"
    hosts = benign.host_ids
    n_hosts = len(hosts)
    end_day = benign.start_day + benign.days

    # user agents: a handful of browser builds, plus per-host niche software
    ua_pop = [f"Mozilla/5.0 (Windows NT 6.1) Browser/{30 + i}.0" for i in range(benign.ua_popular)]
    ua_niche = [f"NicheTool/{i}.{int(rng.integers(10))} (build {int(rng.integers(1000, 9999))})"
                for i in range(benign.ua_rare)]
    host_ua = rng.integers(0, benign.ua_popular, n_hosts)
    host_niche: Dict[int, str] = {}
    if ua_niche:
        for h in np.flatnonzero(rng.random(n_hosts) < benign.rare_software_host_frac):
            host_niche[int(h)] = ua_niche[int(rng.integers(len(ua_niche)))]

    # popular sites, Zipf weighted, each with a few subdomains
    popular = [names.fresh(tld=_TLDS[i % 3]) for i in range(benign.domains_popular)]
    pop_ip = {d: ips.benign() for d in popular}
    weights = 1.0 / np.arange(1, len(popular) + 1) ** 1.1 if popular else np.array([])
    weights = weights / weights.sum() if popular else weights
    for d in popular:
        created = day_date(benign.start_day) - dt.timedelta(days=int(rng.integers(1500, 7000)))
        whois[d] = WhoisRecord(created, day_date(end_day) + dt.timedelta(days=int(rng.integers(100, 3000))))
    subs = ("www", "cdn", "api", "img", "static")

    def registration(domain: str, age_lo: int, age_hi: int, val_lo: int, val_hi: int, day: int,
                     miss_prob: float) -> None:
        if rng.random() < miss_prob:
            return
        today = day_date(day)
        whois[domain] = WhoisRecord(today - dt.timedelta(days=int(rng.integers(age_lo, age_hi + 1))),
                                    today + dt.timedelta(days=int(rng.integers(val_lo, val_hi + 1))))

    out: List[Event] = []

    def emit(ts: int, h: int, domain: str, ip: str, ua: Optional[str], ref: bool, status: int = 200):
        if http:
            out.append(Event(int(ts), hosts[h], domain, ip, None, ua, ref, status, "http"))
        else:
            out.append(Event(int(ts), hosts[h], domain, ip, "A", None, None, None, "dns"))

    host_index = {h: i for i, h in enumerate(hosts)}
    # work-day window per host
    shift = rng.integers(-3600, 3600, n_hosts)

    for day in range(benign.start_day, end_day):
        base = day * SECONDS_PER_DAY
        # this day's never-seen-before domains, each handed to one to three hosts
        rare_today: List[str] = []
        for _ in range(benign.domains_rare_per_day):
            d = names.fresh()
            rare_today.append(d)
            pop_ip[d] = ips.benign()
            registration(d, 30, 6000, 30, 3000, day, benign.whois_miss_prob)
        rare_set = set(rare_today)
        rare_visits: Dict[int, List[str]] = {}
        for d in rare_today:
            k = 1 + int(rng.binomial(4, 0.15))
            for h in rng.choice(n_hosts, size=min(k, n_hosts), replace=False):
                rare_visits.setdefault(int(h), []).append(d)

        for h in range(n_hosts):
            n_visits = int(rng.poisson(benign.visits_per_host_day))
            targets: List[str] = []
            if popular and n_visits:
                picks = rng.choice(len(popular), size=n_visits, p=weights)
                targets = [popular[int(i)] for i in picks]
            targets += rare_visits.get(h, [])
            if not targets:
                continue
            lo = base + 8 * 3600 + int(shift[h])
            starts = np.sort(rng.integers(lo, lo + 10 * 3600, len(targets)))
            for t0, site in zip(starts, targets):
                n_conn = int(rng.geometric(1.0 / benign.connections_per_visit))
                ts = t0 + np.concatenate(([0], np.cumsum(_gaps(rng, benign, n_conn - 1))))
                fqdn = site if site in rare_set or rng.random() < 0.5 else \
                    f"{subs[int(rng.integers(len(subs)))]}.{site}"
                ua = ua_pop[int(host_ua[h])]
                if h in host_niche and rng.random() < 0.2:
                    ua = host_niche[h]
                ref = bool(rng.random() < benign.referer_presence_prob)
                for t in ts:
                    if t < base + SECONDS_PER_DAY:
                        emit(int(t), h, fqdn, pop_ip[site], ua, ref)

        # benign periodic updaters on fresh domains
        for _ in range(benign.updaters_per_day):
            d = names.fresh()
            pop_ip[d] = ips.benign()
            registration(d, 400, 6000, 100, 3000, day, benign.whois_miss_prob)
            period = int(rng.integers(300, 3601))
            jitter = int(rng.integers(0, 4))
            n_users = 1 + int(rng.binomial(2, 0.3))
            for h in rng.choice(n_hosts, size=min(n_users, n_hosts), replace=False):
                h = int(h)
                ua = ua_pop[int(host_ua[h])]
                ref = bool(rng.random() < 0.8)
                t = base + int(rng.integers(0, 4 * 3600))
                while t < base + SECONDS_PER_DAY:
                    emit(t, h, d, pop_ip[d], ua, ref)
                    t += period + int(rng.integers(-jitter, jitter + 1))

    truth_domains: List[Tuple[str, str, str]] = []
    truth_hosts: List[Tuple[str, str]] = []
    hints: List[Tuple[int, str, str]] = []
    campaign_days: Dict[str, int] = {}
    for c in campaigns:
        base = c.day * SECONDS_PER_DAY
        delivery = list(c.delivery_names) or [names.fresh() for _ in range(c.delivery_domains)]
        octet = iter(rng.permutation(np.arange(2, 254)))
        dom_ip = {d: f"{c.shared_subnet}.{int(next(octet))}" for d in delivery + [c.cc_domain]}
        for d in delivery + [c.cc_domain]:
            today = day_date(c.day)
            whois[d] = WhoisRecord(today - dt.timedelta(days=c.whois_age_days),
                                   today + dt.timedelta(days=c.whois_validity_days))
        for k, h in enumerate(c.hosts):
            hi = host_index[h]
            t = base + c.start_s + (int(rng.integers(0, c.host_stagger_s + 1)) if k else 0)
            browser = ua_pop[int(host_ua[hi])]
            for j, d in enumerate(delivery):
                if j:
                    t += int(rng.integers(5, int(c.stage_gap_max_s) + 1))
                ref = bool(rng.random() < c.delivery_referer_prob)
                for _ in range(1 + int(rng.integers(0, 3))):
                    emit(t, hi, d, dom_ip[d], browser, ref)
                    t += int(rng.integers(1, 4))
            if delivery:
                t += int(rng.integers(5, int(c.stage_gap_max_s) + 1))
            while t < base + SECONDS_PER_DAY:
                emit(t, hi, c.cc_domain, dom_ip[c.cc_domain], c.cc_user_agent, False)
                t += int(round(c.cc_period_s + rng.uniform(-c.cc_jitter_s, c.cc_jitter_s)))
            truth_hosts.append((h, c.campaign_id))
        for d in delivery:
            truth_domains.append((d, c.campaign_id, "delivery"))
        truth_domains.append((c.cc_domain, c.campaign_id, "cc"))
        hints.append((c.day, c.hosts[0], c.campaign_id))
        campaign_days[c.campaign_id] = c.day

    out.sort(key=lambda e: (e.timestamp, e.host, e.domain))
    host_map = HostMap()
    n_leases = (benign.days + LEASE_DAYS - 1) // LEASE_DAYS
    for i in range(n_hosts):
        for k in range(n_leases):
            start = (benign.start_day + k * LEASE_DAYS) * SECONDS_PER_DAY
            end = min(start + LEASE_DAYS * SECONDS_PER_DAY, end_day * SECONDS_PER_DAY) - 1
            host_map.add(host_ip(i, start, benign.start_day), start, end, hosts[i])
    return Trace(out, truth_domains, truth_hosts, WhoisDb(whois), host_map, hints, campaign_days,
                 hosts, benign.start_day)


def random_campaigns(benign: BenignSpec, count: int, days: Sequence[int], rng_seed: int = 0,
                     hosts_range: Tuple[int, int] = (2, 4), delivery_range: Tuple[int, int] = (2, 3),
                     period_range: Tuple[float, float] = (120.0, 3600.0), max_jitter_s: float = 5.0,
                     prefix: str = "camp") -> List[CampaignSpec]:
    """Draw ``count`` campaigns spread over ``days`` (cycled in order)."""
    if count and not days:
        raise SpecError("no days to place campaigns on")
    rng = np.random.default_rng([rng_seed, 7919])
    names = _Names(rng)
    used24: Set[str] = set()
    out = []
    for i in range(count):
        day = int(days[i % len(days)])
        n_hosts = int(rng.integers(hosts_range[0], hosts_range[1] + 1))
        chosen = sorted(int(x) for x in rng.choice(benign.n_hosts, size=min(n_hosts, benign.n_hosts), replace=False))
        period = float(np.round(rng.uniform(*period_range)))
        while True:
            subnet = f"{int(rng.integers(11, 200))}.{int(rng.integers(0, 256))}.{int(rng.integers(0, 256))}"
            if subnet not in used24:
                used24.add(subnet)
                break
        latest = max(SECONDS_PER_DAY - 12 * period - 7200, 6 * 3600)
        n_delivery = int(rng.integers(delivery_range[0], delivery_range[1] + 1))
        out.append(CampaignSpec(
            campaign_id=f"{prefix}{i:02d}",
            day=day,
            hosts=[f"host{h:04d}" for h in chosen],
            delivery_domains=n_delivery,
            cc_domain=names.fresh(tld="info" if rng.random() < 0.5 else None),
            cc_period_s=period,
            cc_jitter_s=float(rng.uniform(0.0, max_jitter_s)),
            stage_gap_max_s=160.0,
            shared_subnet=subnet,
            whois_age_days=int(rng.integers(1, 90)),
            whois_validity_days=int(rng.integers(180, 400)),
            start_s=int(rng.integers(6 * 3600, int(latest) + 1)),
            host_stagger_s=3600,
            cc_user_agent=None if rng.random() < 0.5 else f"Agent/{int(rng.integers(1, 9))}.{i}",
            delivery_referer_prob=0.3,
            delivery_names=[names.fresh() for _ in range(n_delivery)],
        ))
    return out


@dataclass(frozen=True)
class Scenario:
    """A bootstrap period with labeled training campaigns, then an operation period."""

    benign: BenignSpec
    train: Tuple[CampaignSpec, ...]
    test: Tuple[CampaignSpec, ...]
    bootstrap_days: int
    model_training_days: int

    @property
    def campaigns(self) -> List[CampaignSpec]:
        return list(self.train) + list(self.test)

    @property
    def operation_days(self) -> List[int]:
        s = self.benign.start_day
        return list(range(s + self.bootstrap_days, s + self.benign.days))


def standard_scenario(n_hosts: int = 500, campaigns: int = 20, train_campaigns: int = 10,
                      bootstrap_days: int = 30, operation_days: int = 30, model_training_days: int = 14,
                      rng_seed: int = 0, rare_per_host: float = 0.8) -> Scenario:
    """Training campaigns land in the last ``model_training_days`` of the bootstrap
    period; test campaigns are spread over the operation period."""
    if not 1 <= model_training_days <= bootstrap_days:
        raise SpecError("need 1 <= model_training_days <= bootstrap_days")
    if campaigns and operation_days < 1:
        raise SpecError("test campaigns need at least one operation day")
    benign = BenignSpec(n_hosts=n_hosts, days=bootstrap_days + operation_days,
                        domains_rare_per_day=max(int(rare_per_host * n_hosts), 1))
    s = benign.start_day
    train_days = list(range(s + bootstrap_days - model_training_days, s + bootstrap_days))
    # one test campaign every operation_days / campaigns days
    test_days = [s + bootstrap_days + (i * operation_days) // max(campaigns, 1) for i in range(campaigns)]
    train = random_campaigns(benign, train_campaigns, train_days, rng_seed, prefix="train")
    test = random_campaigns(benign, campaigns, test_days, rng_seed + 1000, prefix="test")
    return Scenario(benign, tuple(train), tuple(test), bootstrap_days, model_training_days)


def write_trace(trace: Trace, directory, rng_seed: int = 0, noise: bool = True) -> Dict[str, Path]:
    """Write events (host field as the leased IP), WHOIS, host map, ground truth and hint seeds.

    With ``noise`` a sprinkling of records that the parser must skip (non-A DNS
    records, bare-IP destinations) is interleaved; they never reach analysis.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([rng_seed, 104729])
    index_of = {h: i for i, h in enumerate(trace.hosts)}

    paths = {name: d / fname for name, fname in
             (("events", EVENTS_FILE), ("whois", WHOIS_FILE), ("hostmap", HOSTMAP_FILE),
              ("truth", TRUTH_FILE), ("seeds", SEEDS_FILE))}
    with open(paths["events"], "w", encoding="utf-8", newline="\n") as fh:
        for ev in trace.events:
            src = host_ip(index_of[ev.host], ev.timestamp, trace.start_day) if ev.host in index_of else ev.host
            fh.write(format_event_line(ev, src) + "\n")
            if noise and rng.random() < 0.01:
                if ev.source == "dns":
                    fh.write(f"ts={ev.timestamp}\thost={src}\tdomain={ev.domain}\trtype=AAAA\tsrc=dns\n")
                else:
                    fh.write(f"ts={ev.timestamp}\thost={src}\tdomain={ev.dest_ip or '192.0.2.1'}"
                             f"\tstatus=200\tsrc=http\n")
    trace.whois.save(paths["whois"])
    trace.host_map.save(paths["hostmap"])
    with open(paths["truth"], "w", encoding="utf-8", newline="\n") as fh:
        for dom, cid, stage in trace.truth_domains:
            fh.write(f"{dom}\t{cid}\t{stage}\n")
        for host, cid in trace.truth_hosts:
            fh.write(f"{host}\t{cid}\n")
    with open(paths["seeds"], "w", encoding="utf-8", newline="\n") as fh:
        for day, host, _cid in trace.hints:
            fh.write(f"host\t{host}\t{day}\n")
    return paths


def read_truth(path) -> Tuple[List[Tuple[str, str, str]], List[Tuple[str, str]]]:
    """Ground truth: three fields are a domain line, two fields a host line."""
    domains, hosts = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if len(parts) == 3:
                domains.append((parts[0], parts[1], parts[2]))
            elif len(parts) == 2:
                hosts.append((parts[0], parts[1]))
    return domains, hosts
