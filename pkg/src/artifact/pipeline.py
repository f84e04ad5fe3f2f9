"""Training and daily operation: reduce, profile, detect beacons, score, expand, report."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from . import features as F
from .beacon import AutomatedPair, BeaconParams, detect_automated_pairs
from .bp import BpState, belief_propagation, build_bipartite_index
from .events import Event
from .profiles import (DomainHistory, RareSet, UaHistory, compute_rare_set, fold_domain, load_histories,
                       rare_events, reduce_events, save_histories, update_history)
from .scoring import (RegressionModel, Thresholds, fit_ols, lanl_detect_cc, lanl_similarity_score,
                      score_domain)

log = logging.getLogger(__name__)

MODES = ("hints", "nohint")
SCORINGS = ("regression", "lanl")


class ConfigError(ValueError):
    pass


class MissingStateError(RuntimeError):
    """History snapshots or model files are not available."""


class TrainingError(RuntimeError):
    pass


def _split_list(value) -> Tuple[str, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return tuple(v.strip() for v in str(value).split(",") if v.strip())


@dataclass
class PipelineConfig:
    fold_level: int = 2
    rare_host_threshold: int = 10
    ua_rare_threshold: int = 10
    bin_width_W: float = 10.0
    jeffrey_threshold_J_T: float = 0.06
    min_connections: int = 4
    cc_score_T_c: float = 0.4
    similarity_T_score: float = 0.4
    max_iterations: int = 5
    mode: str = "nohint"
    scoring: str = "regression"
    dialect: str = "http"
    bootstrap_days: int = 30
    model_training_days: int = 14
    report_top_k: int = 40
    prune_features: bool = True
    timing_window_s: float = 160.0
    lanl_cc_window_s: float = 10.0
    lanl_cc_match: str = "period"
    internal_suffixes: Tuple[str, ...] = ()
    excluded_hosts: Tuple[str, ...] = ()
    history_dir: str = "state/history"
    cc_model: str = "state/cc_model.txt"
    similarity_model: str = "state/similarity_model.txt"
    whois: str = ""
    hostmap: str = ""
    seeds: str = ""

    def __post_init__(self):
        self.internal_suffixes = _split_list(self.internal_suffixes)
        self.excluded_hosts = _split_list(self.excluded_hosts)
        self.validate()

    def validate(self) -> None:
        if self.fold_level < 2:
            raise ConfigError("fold_level must be at least 2")
        if self.rare_host_threshold < 1 or self.ua_rare_threshold < 1:
            raise ConfigError("rarity thresholds must be positive")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.scoring not in SCORINGS:
            raise ConfigError(f"scoring must be one of {SCORINGS}")
        if self.dialect not in ("http", "dns"):
            raise ConfigError("dialect must be http or dns")
        if self.lanl_cc_match not in ("period", "start", "either"):
            raise ConfigError("lanl_cc_match must be period, start or either")
        if self.bootstrap_days < 1 or not 1 <= self.model_training_days <= self.bootstrap_days:
            raise ConfigError("need 1 <= model_training_days <= bootstrap_days")
        if self.report_top_k < 1:
            raise ConfigError("report_top_k must be positive")
        try:
            self.beacon_params
            self.thresholds
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def beacon_params(self) -> BeaconParams:
        return BeaconParams(self.bin_width_W, self.jeffrey_threshold_J_T, self.min_connections)

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.cc_score_T_c, self.similarity_T_score, self.max_iterations)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    @property
    def cc_features(self) -> List[str]:
        out = list(F.CC_FEATURES)
        if self.prune_features:
            out.remove("no_auto_hosts")
        if self.dialect == "dns":
            out = [f for f in out if f not in F.HTTP_ONLY_FEATURES]
        return out

    @property
    def similarity_features(self) -> List[str]:
        out = list(F.SIMILARITY_FEATURES)
        if self.prune_features:
            out.remove("same_ip16")
        if self.dialect == "dns":
            out = [f for f in out if f not in F.HTTP_ONLY_FEATURES]
        return out


def _coerce(fld: dataclasses.Field, raw: str):
    kind = fld.type if isinstance(fld.type, str) else getattr(fld.type, "__name__", str(fld.type))
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind.startswith("Tuple"):
        return _split_list(raw)
    return raw


def parse_config(text: str, **overrides) -> PipelineConfig:
    fields = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep or key not in fields:
            raise ConfigError(f"config line {lineno}: unknown setting {line!r}")
        try:
            values[key] = _coerce(fields[key], raw.strip())
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig(**values)


def load_config(path=None, **overrides) -> PipelineConfig:
    text = Path(path).read_text(encoding="utf-8") if path else ""
    return parse_config(text, **overrides)


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


# -- per-day analysis ------------------------------------------------------

@dataclass
class DayContext:
    """Everything about one day that does not depend on the score thresholds."""

    day: int
    events: List[Event]
    rare: Set[str]
    rare_events: List[Event]
    automated: List[AutomatedPair]
    index: F.DayIndex
    cc_scores: Dict[str, float]
    whois: Optional[F.WhoisDb]
    config: PipelineConfig
    similarity_model: Optional[RegressionModel] = None
    extra_domains: Set[str] = field(default_factory=set)

    @property
    def automated_domains(self) -> List[str]:
        return sorted({p.domain for p in self.automated})

    def cc_flagged(self, T_c: Optional[float] = None) -> Dict[str, float]:
        T_c = self.config.cc_score_T_c if T_c is None else T_c
        return {d: s for d, s in self.cc_scores.items() if s >= T_c}

    def similarity_score(self, domain: str, labeled: Iterable[str]) -> float:
        cfg = self.config
        feats = F.extract_similarity_features(domain, labeled, self.index, self.whois, self.day,
                                              self.similarity_model.defaults if self.similarity_model else None)
        if cfg.scoring == "lanl":
            return lanl_similarity_score(max(feats.no_hosts, 1), feats.min_time_gap_s <= cfg.timing_window_s,
                                         feats.ip_proximity)
        return score_domain(self.similarity_model, feats.as_dict())


def build_day_context(config: PipelineConfig, events: Sequence[Event], day: int,
                      history: DomainHistory, ua_history: UaHistory,
                      cc_model: Optional[RegressionModel] = None,
                      similarity_model: Optional[RegressionModel] = None,
                      whois: Optional[F.WhoisDb] = None,
                      extra_domains: Iterable[str] = (),
                      score_cc: bool = True) -> DayContext:
    """Reduce, find rare destinations and automated channels, and score C&C candidates.

    ``history``/``ua_history`` must describe the days before ``day``.
    """
    fl = config.fold_level
    events = reduce_events(events, config.internal_suffixes, config.excluded_hosts)
    rare = compute_rare_set(history, events, day, config.rare_host_threshold, fl)
    rev = rare_events(events, rare, fl)
    extra = set(extra_domains) - rare.domains
    idx_events = rev
    if extra:
        idx_events = rev + [e for e in events if fold_domain(e.domain, fl) in extra]
    auto = detect_automated_pairs(rev, config.beacon_params, fl)
    index = F.DayIndex(idx_events, day, fl, ua_history, config.ua_rare_threshold)

    cc_scores: Dict[str, float] = {}
    by_domain: Dict[str, List[AutomatedPair]] = {}
    for p in auto:
        by_domain.setdefault(p.domain, []).append(p)
    for d in sorted(by_domain) if score_cc else ():
        if config.scoring == "lanl":
            if lanl_detect_cc(by_domain[d], config.lanl_cc_window_s, config.lanl_cc_match):
                cc_scores[d] = 1.0
            continue
        if cc_model is None:
            raise MissingStateError("regression scoring needs a C&C model")
        feats = F.extract_cc_features(d, index, by_domain[d], whois, day, cc_model.defaults)
        cc_scores[d] = score_domain(cc_model, feats.as_dict())
    return DayContext(day, list(events), rare.domains, rev, auto, index, cc_scores, whois, config,
                      similarity_model, extra)


@dataclass
class ReportEntry:
    rank: int
    domain: str
    iteration: int
    reason: str
    score: float


@dataclass
class DailyReport:
    day: int
    mode: str
    entries: List[ReportEntry]
    hosts: List[str]
    n_rare: int = 0
    n_automated_pairs: int = 0
    n_cc_flagged: int = 0
    seeds_excluded: int = 0

    @property
    def domains(self) -> List[str]:
        return [e.domain for e in self.entries]

    def counts(self) -> Dict[str, int]:
        out = {"cc": 0, "similarity": 0, "seed": 0}
        for e in self.entries:
            out[e.reason] = out.get(e.reason, 0) + 1
        return out

    def to_text(self) -> str:
        c = self.counts()
        lines = [
            f"# day={self.day} mode={self.mode} rare_domains={self.n_rare} "
            f"automated_pairs={self.n_automated_pairs} cc_flagged={self.n_cc_flagged}",
            f"# detected={len(self.entries)} cc={c['cc']} similarity={c['similarity']} "
            f"seed={c['seed']} seeds_excluded={self.seeds_excluded}",
            "rank\tdomain\titeration\treason\tscore",
        ]
        lines += [f"{e.rank}\t{e.domain}\t{e.iteration}\t{e.reason}\t{e.score:.6f}" for e in self.entries]
        lines.append(f"# compromised_hosts={len(self.hosts)}")
        lines += [f"host\t{h}" for h in self.hosts]
        return "\n".join(lines) + "\n"


def run_bp(ctx: DayContext, mode: str, seed_hosts: Iterable[str] = (), seed_domains: Iterable[str] = (),
           thresholds: Optional[Thresholds] = None) -> BpState:
    cfg = ctx.config
    thresholds = thresholds or cfg.thresholds
    flagged = ctx.cc_flagged(thresholds.cc_score_T_c)
    fl = cfg.fold_level
    seed_domains = {fold_domain(d, fl) for d in seed_domains}
    if mode == "nohint":
        seed_domains = set(flagged)
        seed_hosts = set()
    graph_events = ctx.rare_events
    if seed_domains - ctx.rare:
        graph_events = graph_events + [e for e in ctx.events if fold_domain(e.domain, fl) in seed_domains]
    index = build_bipartite_index(graph_events, RareSet(ctx.day, ctx.rare), fl, seed_domains)
    return belief_propagation(
        index, set(seed_hosts), seed_domains,
        detect_cc=flagged.get,
        compute_score=ctx.similarity_score,
        thresholds=thresholds,
        seed_scores=flagged,
    )


def make_report(ctx: DayContext, state: BpState, mode: str, top_k: int) -> DailyReport:
    labels = state.ordered_labels(include_seeds=(mode == "nohint"))
    entries = []
    for lbl in labels[:top_k]:
        reason = "cc" if (mode == "nohint" and lbl.reason == "seed") else lbl.reason
        entries.append(ReportEntry(len(entries) + 1, lbl.domain, lbl.iteration, reason, lbl.score))
    n_seed = sum(1 for l in state.labels.values() if l.reason == "seed")
    return DailyReport(ctx.day, mode, entries, sorted(state.H), len(ctx.rare), len(ctx.automated),
                       len(ctx.cc_flagged()), 0 if mode == "nohint" else n_seed)


# -- state -----------------------------------------------------------------

@dataclass
class Detector:
    """Histories, models and lookups carried from day to day."""

    config: PipelineConfig
    history: DomainHistory = field(default_factory=DomainHistory)
    ua_history: UaHistory = field(default_factory=UaHistory)
    cc_model: Optional[RegressionModel] = None
    similarity_model: Optional[RegressionModel] = None
    whois: Optional[F.WhoisDb] = None

    @classmethod
    def load(cls, config: PipelineConfig) -> "Detector":
        try:
            history, ua_history = load_histories(config.history_dir)
        except FileNotFoundError as exc:
            raise MissingStateError(str(exc)) from exc
        cc = sim = None
        if config.scoring == "regression":
            for p in (config.cc_model, config.similarity_model):
                if not Path(p).exists():
                    raise MissingStateError(f"model file {p} not found; run training first")
            cc = RegressionModel.load(config.cc_model)
            sim = RegressionModel.load(config.similarity_model)
        whois = F.WhoisDb.load(config.whois) if config.whois else None
        return cls(config, history, ua_history, cc, sim, whois)

    def save(self) -> None:
        save_histories(self.config.history_dir, self.history, self.ua_history)
        for model, path in ((self.cc_model, self.config.cc_model),
                            (self.similarity_model, self.config.similarity_model)):
            if model is not None:
                Path(path).parent.mkdir(parents=True, exist_ok=True)
                model.save(path)

    def views(self, day: int) -> Tuple[DomainHistory, UaHistory]:
        """Histories as they stood before ``day``."""
        h, u = self.history, self.ua_history
        if h.last_day is not None and day <= h.last_day:
            h = h.as_of(day)
        if u.last_day is not None and day <= u.last_day:
            u = u.as_of(day)
        return h, u

    def context(self, events: Sequence[Event], day: int, extra_domains: Iterable[str] = (),
                config: Optional[PipelineConfig] = None) -> DayContext:
        cfg = config or self.config
        h, u = self.views(day)
        return build_day_context(cfg, events, day, h, u, self.cc_model, self.similarity_model,
                                 self.whois, extra_domains)

    def ingest(self, events: Sequence[Event], day: int) -> bool:
        """Fold the day into the histories; a day already ingested is left alone."""
        cfg = self.config
        if self.history.last_day is not None and day <= self.history.last_day:
            return False
        events = reduce_events(events, cfg.internal_suffixes, cfg.excluded_hosts)
        update_history(self.history, events, day, cfg.fold_level)
        self.ua_history.update(events, day)
        return True


def run_day(detector: Detector, events: Sequence[Event], day: int, mode: Optional[str] = None,
            seed_hosts: Iterable[str] = (), seed_domains: Iterable[str] = (),
            update: bool = True) -> DailyReport:
    """Detect on one day against the pre-day profiles, then fold the day into them."""
    cfg = detector.config
    mode = mode or cfg.mode
    if cfg.scoring == "regression" and (detector.cc_model is None or detector.similarity_model is None):
        raise MissingStateError("models are not trained")
    seed_domains = list(seed_domains)
    ctx = detector.context(events, day, extra_domains={fold_domain(d, cfg.fold_level) for d in seed_domains})
    state = run_bp(ctx, mode, seed_hosts, seed_domains)
    report = make_report(ctx, state, mode, cfg.report_top_k)
    if update:
        detector.ingest(events, day)
    return report


# -- training --------------------------------------------------------------

@dataclass
class TrainingResult:
    detector: Detector
    cc_samples: int = 0
    cc_positives: int = 0
    similarity_samples: int = 0
    similarity_positives: int = 0

    def report(self) -> str:
        lines = [f"cc_samples\t{self.cc_samples}\tpositives\t{self.cc_positives}",
                 f"similarity_samples\t{self.similarity_samples}\tpositives\t{self.similarity_positives}"]
        for model in (self.detector.cc_model, self.detector.similarity_model):
            if model is None:
                continue
            lines.append(f"model\t{model.name}\tintercept\t{model.intercept:.6f}")
            for f, w in model.weights.items():
                lines.append(f"weight\t{model.name}\t{f}\t{w:.6f}")
        return "\n".join(lines) + "\n"


def run_training(config: PipelineConfig, events_by_day: Mapping[int, Sequence[Event]],
                 labels: Optional[Mapping[str, int]] = None,
                 whois: Optional[F.WhoisDb] = None) -> TrainingResult:
    """Build histories over the bootstrap days and fit both scoring models.

    Model samples come from the last ``model_training_days`` of the bootstrap
    period: every rare automated domain for the C&C model, and every rare
    non-automated domain visited by hosts of labeled C&C domains for the
    similarity model. Domains absent from ``labels`` count as benign.
    """
    days = sorted(events_by_day)
    if len(days) < config.bootstrap_days:
        raise TrainingError(f"need {config.bootstrap_days} bootstrap days, got {len(days)}")
    days = days[:config.bootstrap_days]
    need_models = config.scoring == "regression"
    if need_models and labels is None:
        raise TrainingError("labels are required to fit the scoring models")
    labels = labels or {}
    detector = Detector(config, whois=whois)
    model_days = set(days[-config.model_training_days:])

    cc_rows: List[Tuple[str, int, Dict[str, float], int]] = []
    sim_rows: List[Tuple[str, int, Dict[str, float], int]] = []
    for day in days:
        events = events_by_day[day]
        if need_models and day in model_days:
            ctx = build_day_context(config, events, day, detector.history, detector.ua_history,
                                    whois=whois, score_cc=False)
            by_domain: Dict[str, List[AutomatedPair]] = {}
            for p in ctx.automated:
                by_domain.setdefault(p.domain, []).append(p)
            for d in sorted(by_domain):
                feats = F.extract_cc_features(d, ctx.index, by_domain[d], whois, day, {})
                cc_rows.append((d, day, feats.as_dict(), int(labels.get(d, 0))))
            confirmed = {d for d in by_domain if labels.get(d, 0)}
            if confirmed:
                hosts = set().union(*(ctx.index.hosts[d] for d in confirmed))
                candidates = set().union(*(ctx.index.domains_by_host.get(h, set()) for h in hosts))
                for d in sorted(candidates - set(by_domain)):
                    feats = F.extract_similarity_features(d, confirmed, ctx.index, whois, day, {})
                    sim_rows.append((d, day, feats.as_dict(), int(labels.get(d, 0))))
        detector.ingest(events, day)

    result = TrainingResult(detector, len(cc_rows), sum(r[3] for r in cc_rows),
                            len(sim_rows), sum(r[3] for r in sim_rows))
    if not need_models:
        return result

    for name, rows in (("cc", cc_rows), ("similarity", sim_rows)):
        pos = sum(r[3] for r in rows)
        if pos == 0 or pos == len(rows):
            raise TrainingError(f"{name} model needs both classes: {pos} positive of {len(rows)} samples")

    defaults = F.whois_defaults(((d, day) for d, day, _, _ in cc_rows), whois)
    detector.cc_model = fit_model(cc_rows, config.cc_features, defaults, "cc")
    detector.similarity_model = fit_model(sim_rows, config.similarity_features, defaults, "similarity")
    return result


def fit_model(rows, feature_names, defaults, name) -> RegressionModel:
    """Fit one scoring model from (domain, day, features, label) rows; WHOIS gaps take ``defaults``."""
    samples = []
    for _, _, feats, label in rows:
        x = dict(feats)
        for k in F.WHOIS_FEATURES:
            if x.get(k) is None:
                x[k] = defaults[k]
        samples.append((x, label))
    model_defaults = {k: defaults[k] for k in F.WHOIS_FEATURES if k in feature_names}
    # a feature that never varies in training carries no signal; keep it at weight 0
    constant = {f: samples[0][0][f] for f in feature_names
                if all(x[f] == samples[0][0][f] for x, _ in samples)}
    varying = [f for f in feature_names if f not in constant]
    if not varying:
        raise TrainingError(f"{name} model: every feature is constant over the training samples")
    model = fit_ols(samples, varying, model_defaults, name)
    weights, norm = {}, {}
    for f in feature_names:
        weights[f] = model.weights.get(f, 0.0)
        norm[f] = model.norm_params.get(f, (float(constant.get(f, 0.0)),) * 2)
    return RegressionModel(weights, model.intercept, norm, model.defaults, name)


# -- evaluation ------------------------------------------------------------

@dataclass
class Detection:
    detected: int = 0
    true_positives: int = 0
    malicious: int = 0
    found: int = 0

    @property
    def tdr(self) -> float:
        return self.true_positives / self.detected if self.detected else 0.0

    @property
    def fdr(self) -> float:
        return 1.0 - self.tdr if self.detected else 0.0

    @property
    def fnr(self) -> float:
        return 1.0 - self.found / self.malicious if self.malicious else 0.0

    def add(self, other: "Detection") -> None:
        self.detected += other.detected
        self.true_positives += other.true_positives
        self.malicious += other.malicious
        self.found += other.found


def score_report(report: DailyReport, malicious: Set[str], seeds: Set[str] = frozenset()) -> Detection:
    detected = [d for d in report.domains if d not in seeds]
    tp = sum(1 for d in detected if d in malicious)
    targets = malicious - set(seeds)
    return Detection(len(detected), tp, len(targets), len(targets & set(detected)))
