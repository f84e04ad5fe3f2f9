import random

import pytest

from artifact.bp import BipartiteIndex, Label, belief_propagation, build_bipartite_index
from artifact.profiles import RareSet
from artifact.scoring import Thresholds
from bp_reference import check_invariants, random_case, reference_loop
from conftest import DAY, ev


def _index(edges, rare):
    idx = BipartiteIndex()
    for h, d in edges:
        idx.dom_host.setdefault(d, set()).add(h)
        if d in rare:
            idx.host_rdom.setdefault(h, set()).add(d)
    return idx


def test_build_index_examples():
    events = [ev(0, "A", "d1.com"), ev(1, "A", "d2.com"), ev(2, "B", "d2.com"), ev(3, "B", "d2.com"),
              ev(4, "C", "popular.com")]
    idx = build_bipartite_index(events, RareSet(DAY, {"d1.com", "d2.com"}))
    assert idx.dom_host["d2.com"] == {"A", "B"}
    assert idx.host_rdom["A"] == {"d1.com", "d2.com"}
    assert "C" not in idx.host_rdom and "popular.com" not in idx.dom_host


def test_seed_domain_outside_rare_set_still_links_hosts():
    events = [ev(0, "A", "ioc.com"), ev(1, "A", "r.com")]
    idx = build_bipartite_index(events, RareSet(DAY, {"r.com"}), extra_domains={"ioc.com"})
    assert idx.hosts_of({"ioc.com"}) == {"A"} and idx.rare_of({"A"}) == {"r.com"}


def test_isolated_seeds_are_a_fixed_point():
    state = belief_propagation(BipartiteIndex(), {"A"}, {"x.com"}, lambda d: None, lambda d, m: 1.0)
    assert state.H == {"A"} and state.M == {"x.com"} and len(state.history) == 1


def test_campaign_walkthrough():
    # hint host A beacons to c2 together with B; B also visited the delivery domains
    edges = [("A", "c2.com"), ("B", "c2.com"), ("B", "drop.com"), ("B", "land.net"), ("B", "benign.org")]
    rare = {"c2.com", "drop.com", "land.net", "benign.org"}
    sim = {"drop.com": 0.9, "land.net": 0.7, "benign.org": 0.1}
    state = belief_propagation(_index(edges, rare), {"A"}, set(), {"c2.com": 0.8}.get,
                               lambda d, m: sim[d], Thresholds(0.4, 0.4, 5))
    assert state.H == {"A", "B"}
    assert [(l.domain, l.iteration, l.reason) for l in state.ordered_labels()] == [
        ("c2.com", 1, "cc"), ("drop.com", 2, "similarity"), ("land.net", 3, "similarity")]
    assert state.iterations == 4


def test_similarity_ties_go_to_smallest_domain():
    edges = [("A", "b.com"), ("A", "a.com")]
    state = belief_propagation(_index(edges, {"a.com", "b.com"}), {"A"}, set(), lambda d: None,
                               lambda d, m: 0.5, Thresholds(max_iterations=1))
    assert state.M == {"a.com"}


def test_ordered_labels_and_seed_filter():
    edges = [("A", "x.com")]
    state = belief_propagation(_index(edges, {"x.com"}), set(), {"s.com"}, lambda d: None, lambda d, m: 0.0,
                               seed_scores={"s.com": 0.7})
    assert state.ordered_labels() == [Label("s.com", 0, "seed", 0.7)]
    assert state.ordered_labels(include_seeds=False) == []


@pytest.mark.parametrize("seed", range(40))
def test_matches_reference_loop(seed):
    rng = random.Random(seed)
    edges, rare, sH, sM, detect_cc, compute_score, T, cap = random_case(rng)
    state = belief_propagation(_index(edges, rare), sH, sM, detect_cc, compute_score, Thresholds(0.4, T, cap))
    H, M, labels = reference_loop(edges, rare, sH, sM, detect_cc, compute_score, T, cap)
    assert state.H == H and state.M == M
    got = {d: (l.iteration, l.reason) if l.reason == "seed" else (l.iteration, l.reason, l.score)
           for d, l in state.labels.items()}
    assert got == labels
    check_invariants(state, sM, detect_cc, compute_score, cap)
