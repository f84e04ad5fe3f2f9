import copy

import pytest

from artifact.events import group_by_day
from artifact.pipeline import PipelineConfig, run_training
from artifact.simgen import generate_trace, standard_scenario
from artifact.sweep import SUMMARY_HEADER, collect_contexts, is_monotone, summary_table, sweep, value_range


@pytest.fixture(scope="module")
def contexts():
    sc = standard_scenario(n_hosts=80, campaigns=4, train_campaigns=6, bootstrap_days=10, operation_days=4,
                           model_training_days=6, rng_seed=8)
    trace = generate_trace(sc.benign, sc.campaigns, 8)
    by_day = group_by_day(trace.events)
    cfg = PipelineConfig(bootstrap_days=10, model_training_days=6)
    res = run_training(cfg, {d: by_day[d] for d in sorted(by_day)[:10]}, trace.domain_labels(), trace.whois)
    return collect_contexts(copy.deepcopy(res.detector), by_day, sc.operation_days), trace


def test_value_range():
    assert value_range("0.40:0.48:0.02") == [0.4, 0.42, 0.44, 0.46, 0.48]
    assert value_range("1, 2,3") == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        value_range("0:1:0")


def test_is_monotone():
    assert is_monotone([3, 3, 1], increasing=False) and not is_monotone([1, 2], increasing=False)
    assert is_monotone([1, 1, 4], increasing=True)


def test_tc_sweep_nonincreasing_with_reports(contexts):
    ctxs, trace = contexts
    points = sweep(ctxs, "T_c", value_range("0.40:0.48:0.02"), malicious=trace.malicious_domains)
    assert is_monotone([p.count for p in points], increasing=False)
    assert all(len(p.reports) == len(ctxs) for p in points)
    assert points[0].tdr is not None
    table = summary_table(points).splitlines()
    assert table[0] == SUMMARY_HEADER and len(table) == 6


def test_jt_sweep_nondecreasing(contexts):
    ctxs, _ = contexts
    points = sweep(ctxs, "J_T", [0.0, 0.02, 0.06, 0.2, 0.5, 1.0, 1.4])
    assert is_monotone([p.count for p in points], increasing=True)
    assert points[0].tdr is None


def test_tscore_sweep_in_hint_mode(contexts):
    ctxs, trace = contexts
    seeds = {day: [h] for day, h, _ in trace.hints}
    points = sweep(ctxs, "T_score", [0.2, 0.6, 1.01], mode="hints", seeds_by_day=seeds)
    assert points[-1].count <= points[0].count


def test_unknown_param(contexts):
    with pytest.raises(ValueError):
        sweep(contexts[0], "W", [1.0])
