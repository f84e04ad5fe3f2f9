"""Canonical outbound-connection records and the line parser for both log dialects.

A canonical event file holds one record per line as tab-separated ``key=value``
pairs. Recognised keys are ``ts host domain ip rtype ua ref status src``;
optional fields are simply omitted.
"""

from __future__ import annotations

import bisect
import ipaddress
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

DIALECTS = ("dns", "http")
KEYS = ("ts", "host", "domain", "ip", "rtype", "ua", "ref", "status", "src")

SECONDS_PER_DAY = 86400


class ParseError(ValueError):
    """A line that cannot be read as a canonical record."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(where + message)


class UnresolvableHostError(ParseError):
    """Source IP with no host-map entry covering the event time."""


class _Skip:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "SKIP"

    def __bool__(self) -> bool:
        return False


#: Returned by :func:`parse_event_line` for records discarded by reduction rules.
SKIP = _Skip()


@dataclass(frozen=True)
class Event:
    timestamp: int
    host: str
    domain: str
    dest_ip: Optional[str] = None
    record_type: Optional[str] = None
    user_agent: Optional[str] = None
    referer_present: Optional[bool] = None
    status_code: Optional[int] = None
    source: str = "http"

    @property
    def day(self) -> int:
        return self.timestamp // SECONDS_PER_DAY


@dataclass
class HostMap:
    """Maps a source IP and a time to a host name (DHCP/VPN leases, pre-resolved)."""

    # ip -> sorted list of (start, end, host); ranges inclusive on both ends
    entries: Dict[str, List[Tuple[int, int, str]]] = field(default_factory=dict)

    def add(self, ip: str, start: int, end: int, host: str) -> None:
        if end < start:
            raise ValueError(f"lease for {ip} ends before it starts")
        leases = self.entries.setdefault(ip, [])
        for s, e, _ in leases:
            if start <= e and s <= end:
                raise ValueError(f"overlapping leases for {ip}: [{s},{e}] and [{start},{end}]")
        bisect.insort(leases, (start, end, host))

    def resolve(self, ip: str, ts: int) -> Optional[str]:
        leases = self.entries.get(ip)
        if not leases:
            return None
        i = bisect.bisect_right(leases, (ts, float("inf"), "")) - 1
        if i >= 0:
            start, end, host = leases[i]
            if start <= ts <= end:
                return host
        return None

    @classmethod
    def load(cls, path) -> "HostMap":
        hm = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ParseError("host map needs ip, start_ts, end_ts, host", lineno)
                ip, start, end, host = parts
                try:
                    hm.add(ip, int(start), int(end), host)
                except ValueError as exc:
                    raise ParseError(str(exc), lineno) from exc
        return hm

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for ip in sorted(self.entries):
                for start, end, host in self.entries[ip]:
                    fh.write(f"{ip}\t{start}\t{end}\t{host}\n")


def is_ip_address(value: str) -> bool:
    try:
        ipaddress.ip_address(value)
    except ValueError:
        return False
    return True


def normalize_domain(raw: str) -> str:
    """Lowercase, drop scheme/port/path and trailing dots."""
    d = raw.strip().lower()
    if "://" in d:
        d = d.split("://", 1)[1]
    for sep in ("/", "?", "#"):
        d = d.split(sep, 1)[0]
    if "@" in d:
        d = d.rsplit("@", 1)[1]
    if d.startswith("["):
        # bracketed IPv6 literal
        return d[1:].split("]", 1)[0]
    if d.count(":") == 1:
        d = d.split(":", 1)[0]
    return d.rstrip(".")


def _fields(line: str, lineno: Optional[int]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for part in line.split("\t"):
        if not part:
            continue
        key, sep, value = part.partition("=")
        if not sep:
            raise ParseError(f"field without '=': {part!r}", lineno)
        if key not in KEYS:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", lineno)
        out[key] = value
    return out


def parse_event_line(line: str, dialect: str, host_map: Optional[HostMap] = None,
                     lineno: Optional[int] = None):
    """Parse one canonical record.

    Returns an :class:`Event`, or :data:`SKIP` for non-A DNS records and for
    destinations that are bare IP addresses. Raises :class:`ParseError` for
    malformed lines and :class:`UnresolvableHostError` when the source is an IP
    that the host map does not cover.
    """
    if dialect not in DIALECTS:
        raise ValueError(f"unknown dialect {dialect!r}")
    f = _fields(line.rstrip("\r\n"), lineno)

    src = f.get("src", dialect)
    if src != dialect:
        raise ParseError(f"record source {src!r} does not match dialect {dialect!r}", lineno)
    for key in ("ts", "host", "domain"):
        if not f.get(key):
            raise ParseError(f"missing required field {key!r}", lineno)
    try:
        ts = int(f["ts"])
    except ValueError:
        raise ParseError(f"bad timestamp {f['ts']!r}", lineno) from None
    if ts < 0:
        raise ParseError("negative timestamp", lineno)

    if src == "dns":
        extra = [k for k in ("ua", "ref", "status") if k in f]
        if extra:
            raise ParseError(f"HTTP-only fields in DNS record: {', '.join(extra)}", lineno)
        rtype = f.get("rtype", "A").upper()
        if rtype != "A":
            return SKIP
    else:
        rtype = None
        if "rtype" in f:
            raise ParseError("rtype is only valid for DNS records", lineno)

    domain = normalize_domain(f["domain"])
    if not domain or any(c.isspace() for c in domain):
        raise ParseError(f"bad domain {f['domain']!r}", lineno)
    if is_ip_address(domain):
        return SKIP

    host = f["host"]
    if is_ip_address(host):
        if host_map is None:
            raise UnresolvableHostError(f"no host map to resolve {host}", lineno)
        resolved = host_map.resolve(host, ts)
        if resolved is None:
            raise UnresolvableHostError(f"no lease for {host} at {ts}", lineno)
        host = resolved

    dest_ip = f.get("ip") or None
    if dest_ip is not None and not is_ip_address(dest_ip):
        raise ParseError(f"bad destination ip {dest_ip!r}", lineno)

    if src == "dns":
        return Event(ts, host, domain, dest_ip, rtype, None, None, None, "dns")

    status = None
    if f.get("status"):
        try:
            status = int(f["status"])
        except ValueError:
            raise ParseError(f"bad status {f['status']!r}", lineno) from None
    ua = f.get("ua") or None
    return Event(ts, host, domain, dest_ip, None, ua, bool(f.get("ref")), status, "http")


def format_event_line(ev: Event, host_field: Optional[str] = None) -> str:
    """Inverse of :func:`parse_event_line` for a parsed event."""
    parts = [f"ts={ev.timestamp}", f"host={host_field or ev.host}", f"domain={ev.domain}"]
    if ev.dest_ip:
        parts.append(f"ip={ev.dest_ip}")
    if ev.record_type:
        parts.append(f"rtype={ev.record_type}")
    if ev.user_agent:
        parts.append(f"ua={ev.user_agent}")
    if ev.referer_present:
        parts.append("ref=1")
    if ev.status_code is not None:
        parts.append(f"status={ev.status_code}")
    parts.append(f"src={ev.source}")
    return "\t".join(parts)


@dataclass
class ParseStats:
    emitted: int = 0
    skipped: int = 0
    errored: int = 0
    errors: List[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.emitted + self.skipped + self.errored


def iter_events(lines: Iterable[str], dialect: str, host_map: Optional[HostMap] = None,
                stats: Optional[ParseStats] = None, strict: bool = False) -> Iterator[Event]:
    """Parse many lines, counting every line as emitted, skipped or errored.

    Blank lines and ``#`` comments are ignored entirely. With ``strict`` the
    first error is raised; otherwise it is counted and dropped.
    """
    if stats is None:
        stats = ParseStats()
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            ev = parse_event_line(line, dialect, host_map, lineno)
        except ParseError as exc:
            if strict:
                raise
            stats.errored += 1
            if len(stats.errors) < 100:
                stats.errors.append(str(exc))
            continue
        if ev is SKIP:
            stats.skipped += 1
            continue
        stats.emitted += 1
        yield ev


def read_events(path, dialect: str, host_map: Optional[HostMap] = None,
                stats: Optional[ParseStats] = None, strict: bool = False) -> List[Event]:
    with open(path, encoding="utf-8") as fh:
        return list(iter_events(fh, dialect, host_map, stats, strict))


def write_events(path, events: Iterable[Event], host_fields: Optional[Dict[str, str]] = None) -> None:
    """Write events in canonical form; ``host_fields`` optionally maps host -> raw source field."""
    host_fields = host_fields or {}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(format_event_line(ev, host_fields.get(ev.host)) + "\n")


def group_by_day(events: Iterable[Event]) -> Dict[int, List[Event]]:
    days: Dict[int, List[Event]] = {}
    for ev in events:
        days.setdefault(ev.day, []).append(ev)
    return days


def detect_dialect(path) -> str:
    """Peek at the first record's ``src`` field."""
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            for part in line.rstrip("\n").split("\t"):
                if part.startswith("src="):
                    return part[4:]
            break
    return "http"
