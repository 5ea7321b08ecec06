from __future__ import annotations

import dataclasses

import pytest

from lasim.checkers import (
    BRUTE_FORCE_LIMIT, LinearizationError, OpRecord, brute_force_linearizable, check_la_properties,
    history_from_trace, linearize_by_learned_order,
)
from lasim.fuzz import protocol_corpus
from lasim.lattice import AsoVector, LatticeConfig, RegisterCell, make_update_vector
from lasim.scenarios import ScenarioSpec, get_scenario, simulate

CFG = LatticeConfig.square(2)


def W(cells, counters=(0, 0)):
    return AsoVector([RegisterCell(*c) for c in cells], list(counters))


def U(op_id, node, call, ret, reg, writes, val, witness=None, kind="update"):
    return OpRecord(op_id, node, kind, call, ret, "OK" if ret is not None else None,
                    (reg, RegisterCell(writes, val)), None, witness)


def S(op_id, node, call, ret, result, witness=None, marker=None):
    return OpRecord(op_id, node, "snapshot", call, ret, result, None, marker, witness)


# lattice agreement verdicts ------------------------------------------------

def _fair_trace():
    return simulate(ScenarioSpec(name="t", n=3, f=1, seed=4, ops=(
        (0, "update", ("a",)), (1, "update", ("b",)), (2, "snapshot", ()))))


def test_fair_run_passes_every_verdict():
    v = check_la_properties(_fair_trace())
    assert set(v) == {"validity", "stability", "consistency", "liveness"}
    assert all(v.values())


def _doctor_learn(t, new_value, which=-1):
    idx = [k for k, e in enumerate(t.events) if e.learns][which]
    e = t.events[idx]
    node = e.learns[0][0]
    t.events[idx] = dataclasses.replace(e, learns=((node, new_value),) + e.learns[1:])
    return idx


def test_incomparable_learn_fails_consistency_and_names_events():
    t = _fair_trace()
    first = next(k for k, e in enumerate(t.events) if e.learns)
    # a value incomparable with every honest learn: a cell nobody wrote
    odd = make_update_vector(LatticeConfig.square(3), 2, 9, "zz")
    idx = _doctor_learn(t, odd, which=0)
    v = check_la_properties(t)
    assert not v["consistency"] and first == idx and idx in v["consistency"].events
    assert not v["validity"]


def test_shrinking_learn_fails_stability():
    t = _fair_trace()
    node = t.events[[k for k, e in enumerate(t.events) if e.learns][-1]].learns[0][0]
    # give the same node a later learn of bottom
    last = t.events[-1]
    t.events[-1] = dataclasses.replace(last, learns=last.learns + ((node, LatticeConfig.square(3).bottom()),))
    assert not check_la_properties(t)["stability"]


def test_liveness_verdict_flags_unreturned_calls():
    spec = ScenarioSpec(name="t", n=3, f=1, ops=((0, "update", ("a",)),), budget=3)
    t = simulate(spec)
    assert t.outcome == "budget"
    v = check_la_properties(t)
    assert not v["liveness"] and v["liveness"].events == (0,)
    assert "liveness" not in check_la_properties(t, fair=False)


def test_active_faulty_run_passes_verdicts():
    t = simulate(get_scenario("active-faulty", n=7, f=3, k=2))
    v = check_la_properties(t, fair=False)
    assert all(v.values())
    linearize_by_learned_order(history_from_trace(t), 7)


# linearization by learned order -------------------------------------------

def test_history_from_trace_records_cells_and_markers():
    hist = history_from_trace(_fair_trace())
    by_kind = {h.kind: h for h in hist}
    assert hist[0].cell == (0, RegisterCell(1, "a")) and hist[1].cell == (1, RegisterCell(1, "b"))
    assert by_kind["snapshot"].counter == (2, 1)
    assert all(h.complete for h in hist)


def test_sequential_history_orders_update_before_snapshot():
    w1 = W([(1, "a"), (0, "")])
    w2 = W([(1, "a"), (0, "")], (0, 1))
    hist = [U(0, 0, 0, 1, 0, 1, "a", w1), S(1, 1, 2, 3, ("a", ""), w2, (1, 1))]
    lin = linearize_by_learned_order(hist, 2)
    assert [o.op_id for o in lin.order] == [0, 1]
    assert lin.unsuccessful == []


def test_same_key_places_updates_first():
    w = W([(1, "a"), (0, "")], (0, 1))
    hist = [S(1, 1, 0, 3, ("a", ""), w, (1, 1)), U(0, 0, 1, 2, 0, 1, "a", w)]
    assert [o.kind for o in linearize_by_learned_order(hist, 2).order] == ["update", "snapshot"]


def test_overwritten_update_is_reported_unsuccessful():
    w1 = W([(2, "b"), (0, "")])
    # two concurrent MW writes to register 0; the witness only shows the larger cell
    hist = [U(0, 0, 0, 2, 0, 2, "a", w1, "update_mw"), U(1, 1, 1, 3, 0, 2, "b", w1, "update_mw")]
    lin = linearize_by_learned_order(hist, 2)
    assert [o.op_id for o in lin.unsuccessful] == [0]
    assert [o.op_id for o in lin.order] == [0, 1]


def test_snapshot_of_unwritten_value_fails():
    w = W([(1, "x"), (0, "")])
    with pytest.raises(LinearizationError, match="no update wrote"):
        linearize_by_learned_order([S(0, 0, 0, 1, ("x", ""), w)], 2)


def test_incomparable_witnesses_fail():
    a, b = W([(1, "a"), (0, "")]), W([(0, ""), (1, "b")])
    hist = [U(0, 0, 0, 1, 0, 1, "a", a), U(1, 1, 0, 1, 1, 1, "b", b)]
    with pytest.raises(LinearizationError, match="incomparable"):
        linearize_by_learned_order(hist, 2)


def test_real_time_violation_detected():
    # the snapshot finished before the update started but its witness shows the update
    w = W([(1, "a"), (0, "")], (0, 1))
    hist = [S(0, 1, 0, 1, ("a", ""), w, (1, 1)), U(1, 0, 2, 3, 0, 1, "a", w)]
    with pytest.raises(LinearizationError, match="completed before"):
        linearize_by_learned_order(hist, 2)
    assert not brute_force_linearizable(hist, 2)


def test_snapshot_result_must_match_witness():
    w = W([(1, "a"), (0, "")])
    with pytest.raises(LinearizationError, match="differs"):
        linearize_by_learned_order([U(0, 0, 0, 1, 0, 1, "a", w), S(1, 1, 2, 3, ("", ""), w)], 2)


# brute force ------------------------------------------------------------------

def test_brute_force_examples():
    assert brute_force_linearizable([], 2)
    upd = U(0, 0, 0, 1, 0, 1, "a")
    assert brute_force_linearizable([upd, S(1, 1, 2, 3, ("a", ""))], 2)
    # stale read: the update completed before the snapshot started
    assert not brute_force_linearizable([upd, S(1, 1, 2, 3, ("", ""))], 2)
    # concurrent: either result is fine
    assert brute_force_linearizable([U(0, 0, 0, 3, 0, 1, "a"), S(1, 1, 1, 2, ("", ""))], 2)
    # an incomplete update may take effect
    assert brute_force_linearizable([U(0, 0, 0, None, 0, 1, "a"), S(1, 1, 2, 3, ("a", ""))], 2)


def test_brute_force_rejects_two_snapshots_seeing_different_orders():
    ops = [U(0, 0, 0, 9, 0, 1, "a"), U(1, 1, 0, 9, 1, 1, "b"),
           S(2, 2, 1, 2, ("a", "")), S(3, 3, 1, 2, ("", "b"))]
    assert not brute_force_linearizable(ops, 2)


def test_brute_force_limit():
    ops = [U(k, 0, 2 * k, 2 * k + 1, 0, k + 1, "v") for k in range(BRUTE_FORCE_LIMIT + 1)]
    with pytest.raises(ValueError, match="limit"):
        brute_force_linearizable(ops, 1)


# the two routes agree ------------------------------------------------------

def _stale(hist):
    """Negative control: a snapshot that returns a value no update wrote."""
    snaps = [k for k, h in enumerate(hist) if h.kind == "snapshot" and h.complete]
    if not snaps:
        return None
    k = snaps[-1]
    h = hist[k]
    bad = ("never-written",) + tuple(h.result)[1:]
    return hist[:k] + [dataclasses.replace(h, result=bad)] + hist[k + 1:]


def test_routes_agree_on_corpus_and_negative_controls():
    checked = doctored = 0
    for run in protocol_corpus(120, seed=21):
        if run.spec.protocol != "main":
            continue
        hist = history_from_trace(run.trace)
        if sum(h.complete for h in hist) > BRUTE_FORCE_LIMIT:
            continue
        linearize_by_learned_order(hist, run.spec.n)
        assert brute_force_linearizable(hist, run.spec.n)
        checked += 1
        bad = _stale(hist)
        if bad is not None:
            with pytest.raises(LinearizationError):
                linearize_by_learned_order(bad, run.spec.n)
            assert not brute_force_linearizable(bad, run.spec.n)
            doctored += 1
    assert checked >= 40 and doctored >= 20
