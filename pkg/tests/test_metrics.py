from __future__ import annotations

import itertools
import random

import pytest
from hypothesis import assume, given, settings, strategies as st

from conftest import RELAY_CHAIN, FANOUT, NO_HOPS, ONE_HOLE, COVERED, LATE_WINDOW
from lasim.fuzz import covered_traces, random_trace
from lasim.metrics import (
    EXHAUSTIVE_LIMIT, CoveredRequired, Shape, assign_ira, assign_lcc, assign_ntr, find_holes, ira_latency,
    latency_between, lcc_count, min_hop_cover, min_hop_cover_between, naive_round_difference, round_table,
    shape_of, summarize,
)


# fixtures ---------------------------------------------------------------------

def test_relay_chain():
    assert assign_ira(RELAY_CHAIN).rounds == (0, 1, 1, 2)
    assert assign_ntr(RELAY_CHAIN).rounds == (0, 1, 1, 2)
    assert assign_ntr(RELAY_CHAIN).count == 2
    assert lcc_count(RELAY_CHAIN) == 2
    cover = min_hop_cover(RELAY_CHAIN)
    assert cover.k == 2 and cover.method == "exhaustive"


def test_broadcast_fanout():
    assert assign_ntr(FANOUT).count == 1
    assert assign_ira(FANOUT).count == 1
    assert lcc_count(FANOUT) == 2
    assert lcc_count(FANOUT) > assign_ntr(FANOUT).count


def test_hole_detection():
    assert find_holes(NO_HOPS) == [(0, 1), (1, 2), (2, 3)]
    assert find_holes(ONE_HOLE) == [(1, 2)]
    assert find_holes(COVERED) == []
    with pytest.raises(CoveredRequired) as exc:
        assign_ntr(ONE_HOLE)
    assert exc.value.hole == (1, 2)
    with pytest.raises(CoveredRequired):
        min_hop_cover(ONE_HOLE)


def test_late_window_generalized_latency():
    assert find_holes(LATE_WINDOW) == []
    assert latency_between(LATE_WINDOW, 1, 3) == 2
    assert naive_round_difference(LATE_WINDOW, 1, 3) == 1
    assert min_hop_cover_between(LATE_WINDOW, 1, 3).k == 2


def test_simulated_fixtures_match_shapes(fixture_traces):
    assert shape_of(fixture_traces["relay-chain"]) == RELAY_CHAIN
    assert shape_of(fixture_traces["broadcast-fanout"]) == FANOUT
    assert shape_of(fixture_traces["late-window"]) == LATE_WINDOW


def test_trivial_shapes():
    one = Shape.from_hops(2, [(0, 1)])
    assert assign_ntr(one).count == 1 and min_hop_cover(one).k == 1
    single = Shape.from_hops(1, [])
    assert assign_ntr(single).rounds == (0,) and min_hop_cover(single).k == 0
    empty = Shape(())
    assert assign_ira(empty).rounds == () and lcc_count(empty) == 0 and round_table(empty) == []
    with pytest.raises(ValueError):
        Shape.from_hops(3, [(2, 1)])


def test_latency_between_argument_checks():
    with pytest.raises(ValueError):
        latency_between(RELAY_CHAIN, 3, 1)
    with pytest.raises(IndexError):
        latency_between(RELAY_CHAIN, 0, 9)
    with pytest.raises(CoveredRequired):
        latency_between(ONE_HOLE, 0, 4)
    # a window after the hole is still measurable
    assert latency_between(ONE_HOLE, 2, 4) == 1


def test_lcc_labels_start_at_one():
    assert assign_lcc(RELAY_CHAIN).rounds == (1, 2, 2, 3)
    assert assign_lcc(NO_HOPS).rounds == (1, 1, 1, 1)


def test_summary_and_round_table():
    s = summarize(ONE_HOLE)
    assert s.ntr is None and s.hop_cover is None and s.holes == ((1, 2),)
    rows = round_table(RELAY_CHAIN)
    assert [r["ntr"] for r in rows] == [0, 1, 1, 2] and [r["lcc"] for r in rows] == [1, 2, 2, 3]
    assert all(r["ntr"] is None for r in round_table(ONE_HOLE))


def test_greedy_cover_used_beyond_exhaustive_limit():
    L = 2 * EXHAUSTIVE_LIMIT + 10
    sh = Shape.from_hops(L, [(i, i + 2) for i in range(L - 2)] + [(i, i + 1) for i in range(L - 1)])
    cover = min_hop_cover(sh)
    assert cover.method == "greedy"
    assert cover.k == assign_ntr(sh).count == assign_ira(sh).count
    assert len(cover.certificate) == cover.k


# independent oracle: brute force over every hop subset ---------------------

def _brute_cover(sh, a, b):
    if a == b:
        return 0
    hops = [h for h in sh.hops() if h[1] > a and h[0] < b]
    for k in range(len(hops) + 1):
        for combo in itertools.combinations(hops, k):
            pts = set()
            for s, r in combo:
                pts.update(x / 2 for x in range(2 * s, 2 * r + 1))
            if all(x / 2 in pts for x in range(2 * a, 2 * b + 1)):
                return k
    return None


@st.composite
def shapes(draw, max_len=12):
    L = draw(st.integers(1, max_len))
    pairs = [(s, r) for s in range(L) for r in range(s + 1, L)]
    hops = draw(st.lists(st.sampled_from(pairs), max_size=2 * L, unique=True)) if pairs else []
    return Shape.from_hops(L, hops)


@settings(max_examples=300, deadline=None)
@given(shapes())
def test_metric_equivalences_on_arbitrary_shapes(sh):
    assume(not find_holes(sh))
    ira, ntr = assign_ira(sh), assign_ntr(sh)
    assert ira.rounds == ntr.rounds
    assert min_hop_cover(sh).k == ntr.count
    if len(sh.hops()) <= 10:
        assert _brute_cover(sh, 0, len(sh) - 1) == ntr.count
    for i in range(len(sh)):
        for j in range(i, len(sh)):
            assert latency_between(sh, i, j) == min_hop_cover_between(sh, i, j).k
            assert latency_between(sh, i, j) == ira_latency(sh, i, j)


@settings(max_examples=300, deadline=None)
@given(shapes())
def test_holes_match_definition(sh):
    L = len(sh)
    expect = [(l, l + 1) for l in range(L - 1)
              if not any(s <= l < r for s, r in sh.hops())]
    assert find_holes(sh) == expect


@settings(max_examples=200, deadline=None)
@given(shapes())
def test_receiver_round_at_most_oldest_sender_plus_one(sh):
    assume(not find_holes(sh))
    r = assign_ntr(sh).rounds
    for i, src in enumerate(sh.sources):
        if src:
            assert r[i] <= r[min(src)] + 1


@settings(max_examples=200, deadline=None)
@given(shapes())
def test_lcc_is_longest_chain(sh):
    labels = assign_lcc(sh).rounds
    # longest path by dynamic programming over hops, computed separately
    best = [0] * len(sh)
    for s, r in sorted(sh.hops(), key=lambda h: h[1]):
        best[r] = max(best[r], best[s] + 1)
    assert [b + 1 for b in best] == list(labels)


def test_random_traces_obey_the_model_and_metrics_agree():
    rng = random.Random(11)
    seen_multi = False
    for _ in range(200):
        t = random_trace(rng)
        seen_multi |= any(len(e.nodes) > 1 for e in t.events)
        if find_holes(t):
            continue
        assert assign_ira(t).rounds == assign_ntr(t).rounds
    assert seen_multi


def test_covered_corpus_is_covered_and_bounded():
    ts = list(covered_traces(50, seed=5))
    assert all(not find_holes(t) and len(t) <= 40 and t.n <= 5 for t in ts)
    assert any(lcc_count(t) > assign_ntr(t).count for t in ts)
