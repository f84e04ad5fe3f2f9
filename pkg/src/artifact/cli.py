"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
3 missing history snapshots or model files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

from . import __version__
from .beacon import detect_automated_pairs
from .events import HostMap, ParseError, ParseStats, group_by_day, read_events
from .features import WhoisDb
from .pipeline import (ConfigError, Detector, MissingStateError, PipelineConfig, TrainingError, load_config,
                       run_day, run_training)
from .profiles import (DomainHistory, UaHistory, compute_rare_set, load_histories, reduce_events,
                       save_histories, update_history)
from .simgen import generate_trace, read_truth, standard_scenario, write_trace
from .sweep import SWEEP_MAX_ITERATIONS, SWEEP_PARAMS, collect_contexts, summary_table, sweep, value_range

log = logging.getLogger("artifact")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STATE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- input helpers ---------------------------------------------------------

def _config(args, **overrides) -> PipelineConfig:
    values = {k: v for k, v in overrides.items() if v is not None}
    for key in ("whois", "hostmap", "seeds", "mode"):
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    if getattr(args, "state", None):
        state = Path(args.state)
        values.setdefault("history_dir", str(state / "history"))
        values.setdefault("cc_model", str(state / "cc_model.txt"))
        values.setdefault("similarity_model", str(state / "similarity_model.txt"))
    return load_config(getattr(args, "config", None), **values)


def _load_events(path, cfg: PipelineConfig, day: Optional[int] = None):
    host_map = HostMap.load(cfg.hostmap) if cfg.hostmap else None
    stats = ParseStats()
    events = read_events(path, cfg.dialect, host_map, stats)
    log.info("%s: %d events, %d skipped, %d unparseable", path, stats.emitted, stats.skipped, stats.errored)
    for msg in stats.errors[:5]:
        log.warning("%s: %s", path, msg)
    if stats.errored and not stats.emitted:
        raise ParseError(f"{path}: no parseable records ({stats.errored} errors)")
    if day is not None:
        events = [e for e in events if e.day == day]
    return events


def read_seeds(path, day: Optional[int] = None) -> Tuple[List[str], List[str]]:
    """Seed file lines: ``host<TAB>name[<TAB>day]`` or ``domain<TAB>name[<TAB>day]``.

    Lines carrying a day other than ``day`` are ignored.
    """
    hosts, domains = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3) or parts[0] not in ("host", "domain"):
                raise ParseError(f"{path}: bad seed line {line!r}", lineno)
            if len(parts) == 3 and day is not None and int(parts[2]) != day:
                continue
            (hosts if parts[0] == "host" else domains).append(parts[1])
    return hosts, domains


def _seeds(args, cfg: PipelineConfig, day: int) -> Tuple[List[str], List[str]]:
    path = getattr(args, "seeds", None) or cfg.seeds
    if not path:
        return [], []
    return read_seeds(path, day)


def _labels(path) -> Dict[str, int]:
    domains, _hosts = read_truth(path)
    return {d: 1 for d, _, _ in domains}


def _day_range(spec: str) -> range:
    first, _, last = spec.partition("-")
    try:
        lo, hi = int(first), int(last or first)
    except ValueError:
        raise UsageError(f"bad day range {spec!r}; expected FIRST-LAST") from None
    if hi < lo:
        raise UsageError(f"empty day range {spec!r}")
    return range(lo, hi + 1)


def _write(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args) -> int:
    scenario = standard_scenario(n_hosts=args.hosts, campaigns=args.campaigns, train_campaigns=args.train_campaigns,
                                 bootstrap_days=args.bootstrap_days, operation_days=args.operation_days,
                                 model_training_days=args.model_training_days, rng_seed=args.seed)
    trace = generate_trace(scenario.benign, scenario.campaigns, args.seed)
    paths = write_trace(trace, args.out, args.seed, noise=not args.no_noise)
    cfg_path = Path(args.out) / "config.txt"
    cfg_path.write_text(
        f"bootstrap_days={args.bootstrap_days}\nmodel_training_days={args.model_training_days}\n"
        f"whois={paths['whois']}\nhostmap={paths['hostmap']}\nseeds={paths['seeds']}\n",
        encoding="utf-8")
    s = scenario.benign.start_day
    print(f"events\t{paths['events']}\t{len(trace.events)}")
    for name in ("whois", "hostmap", "truth", "seeds"):
        print(f"{name}\t{paths[name]}")
    print(f"config\t{cfg_path}")
    print(f"days\t{s}\t{s + scenario.benign.days - 1}")
    print(f"operation_days\t{s + args.bootstrap_days}\t{s + scenario.benign.days - 1}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, bootstrap_days=args.bootstrap_days)
    events = _load_events(args.events, cfg)
    by_day = group_by_day(events)
    days = sorted(by_day)[:cfg.bootstrap_days]
    labels = _labels(args.labels) if args.labels else None
    whois = WhoisDb.load(cfg.whois) if cfg.whois else None
    result = run_training(cfg, {d: by_day[d] for d in days}, labels, whois)
    result.detector.save()
    sys.stdout.write(result.report())
    print(f"history\t{cfg.history_dir}\tlast_day\t{result.detector.history.last_day}")
    return EXIT_OK


def _day_report(args, update: bool):
    cfg = _config(args)
    detector = Detector.load(cfg)
    events = _load_events(args.events, cfg, args.day)
    hosts, domains = _seeds(args, cfg, args.day)
    report = run_day(detector, events, args.day, cfg.mode, hosts, domains, update=update)
    if update:
        detector.save()
    _write(report.to_text(), args.out)
    if args.figure:
        from .plots import plot_report
        plot_report(report, args.figure)
    return EXIT_OK


def cmd_run_day(args) -> int:
    return _day_report(args, update=not args.no_update)


def cmd_bp(args) -> int:
    return _day_report(args, update=False)


def cmd_detect_beacons(args) -> int:
    cfg = load_config(args.params, hostmap=args.hostmap)
    events = reduce_events(_load_events(args.events, cfg, args.day), cfg.internal_suffixes, cfg.excluded_hosts)
    pairs = detect_automated_pairs(events, cfg.beacon_params, cfg.fold_level)
    _write("".join(f"{p.host}\t{p.domain}\t{p.period:.6f}\t{p.divergence:.6f}\n" for p in pairs), args.out)
    return EXIT_OK


def cmd_profile(args) -> int:
    cfg = load_config(args.config)
    history_dir = Path(args.history)
    try:
        history, ua_history = load_histories(history_dir)
    except FileNotFoundError:
        if not args.init:
            raise MissingStateError(f"no history snapshot in {history_dir}; pass --init to start one")
        history, ua_history = DomainHistory(), UaHistory()
    events = reduce_events(_load_events(args.events, cfg, args.day), cfg.internal_suffixes, cfg.excluded_hosts)
    rare = compute_rare_set(history, events, args.day, cfg.rare_host_threshold, cfg.fold_level)
    update_history(history, events, args.day, cfg.fold_level)
    ua_history.update(events, args.day)
    save_histories(history_dir, history, ua_history)
    print(f"day\t{args.day}\tevents\t{len(events)}\trare_domains\t{len(rare)}")
    for d in sorted(rare.domains):
        print(f"rare\t{d}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .plots import plot_sweep

    cfg = _config(args)
    detector = Detector.load(cfg)
    events = _load_events(args.events, cfg)
    by_day = group_by_day(events)
    days = _day_range(args.days)
    seeds_h: Dict[int, List[str]] = {}
    seeds_d: Dict[int, List[str]] = {}
    seed_path = args.seeds or cfg.seeds
    if cfg.mode == "hints" and seed_path:
        for day in days:
            seeds_h[day], seeds_d[day] = read_seeds(seed_path, day)
    malicious: Optional[Set[str]] = set(_labels(args.truth)) if args.truth else None
    values = value_range(args.values)
    contexts = collect_contexts(detector, by_day, days, seeds_d)
    points = sweep(contexts, args.param, values, cfg.mode, seeds_h, seeds_d, malicious,
                   args.max_iterations or SWEEP_MAX_ITERATIONS)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in points:
        (out / f"report_{p.param}_{p.value:g}.tsv").write_text("".join(p.reports), encoding="utf-8")
    table = summary_table(points)
    (out / f"summary_{args.param}.tsv").write_text(table, encoding="utf-8")
    plot_sweep(points, out / f"sweep_{args.param}.png")
    sys.stdout.write(table)
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def _add_config(p, state=True):
    p.add_argument("--config", help="flat key=value configuration file")
    if state:
        p.add_argument("--state", help="directory holding history/ and model files (overrides config paths)")
    p.add_argument("--whois", help="WHOIS file (domain, created, expires)")
    p.add_argument("--hostmap", help="host map file for IP-addressed sources")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="artifact", description="Detect early-stage enterprise infections from proxy or DNS logs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="write a synthetic trace with planted campaigns")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hosts", type=int, default=500)
    p.add_argument("--campaigns", type=int, default=20, help="campaigns in the operation period")
    p.add_argument("--train-campaigns", type=int, default=10, help="labeled campaigns in the bootstrap period")
    p.add_argument("--bootstrap-days", type=int, default=30)
    p.add_argument("--operation-days", type=int, default=30)
    p.add_argument("--model-training-days", type=int, default=14,
                   help="last bootstrap days that carry training campaigns and model samples")
    p.add_argument("--no-noise", action="store_true", help="omit records the parser is meant to skip")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="build histories over the bootstrap days and fit the scoring models")
    _add_config(p)
    p.add_argument("--events", required=True)
    p.add_argument("--labels", help="ground-truth or reported-domain file")
    p.add_argument("--bootstrap-days", type=int)
    p.set_defaults(func=cmd_train)

    for name, helptext in (("run-day", "detect on one day, then fold it into the histories"),
                           ("bp", "run detection and expansion for one day without touching state")):
        p = sub.add_parser(name, help=helptext)
        _add_config(p)
        p.add_argument("--events", required=True)
        p.add_argument("--day", type=int, required=True)
        p.add_argument("--mode", choices=("hints", "nohint"))
        p.add_argument("--seeds", help="seed file (host or domain lines)")
        p.add_argument("--out", help="report file (default stdout)")
        p.add_argument("--figure", help="also render the report scores to this image file")
        if name == "run-day":
            p.add_argument("--no-update", action="store_true", help="do not fold the day into the histories")
            p.set_defaults(func=cmd_run_day)
        else:
            p.set_defaults(func=cmd_bp)

    p = sub.add_parser("detect-beacons", help="list automated (host, domain) channels for one day")
    p.add_argument("--events", required=True)
    p.add_argument("--day", type=int, required=True)
    p.add_argument("--params", help="configuration file with beacon parameters")
    p.add_argument("--hostmap")
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect_beacons)

    p = sub.add_parser("profile", help="fold one day into a history snapshot and list its rare domains")
    p.add_argument("--events", required=True)
    p.add_argument("--day", type=int, required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--config")
    p.add_argument("--init", action="store_true", help="start a new snapshot if none exists")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("sweep", help="vary one threshold over a range of days")
    _add_config(p)
    p.add_argument("--events", required=True)
    p.add_argument("--days", required=True, help="first-last day range")
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True, help="comma list or start:stop:step")
    p.add_argument("--mode", choices=("hints", "nohint"))
    p.add_argument("--seeds")
    p.add_argument("--truth", help="ground-truth file for TDR")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--out", required=True, help="directory for reports, summary table and figure")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"artifact: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MissingStateError as exc:
        print(f"artifact: missing state: {exc}", file=sys.stderr)
        return EXIT_STATE
    except (TrainingError, FileNotFoundError, ValueError) as exc:
        # ParseError, SpecError, DegenerateFitError and HistoryOrderError are ValueErrors
        print(f"artifact: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
