from __future__ import annotations

import itertools
from collections import deque

import pytest
from hypothesis import given, settings, strategies as st

from lasim.la import (
    AppPropose, Deliver, InternalTick, Kind, LaError, LaMessage, la_apply, la_guard_enabled, la_init,
    la_learned, la_step,
)
from lasim.lattice import LatticeConfig, comparable, join, join_all, leq, make_update_vector


def upd(n, i, w, v):
    return make_update_vector(LatticeConfig.square(n), i, w, v)


class Net:
    """Direct driver over la_step with FIFO channels, for white-box checks."""

    def __init__(self, n, f, lazy=False):
        self.n, self.lazy = n, lazy
        self.s = [la_init(i, n, f) for i in range(n)]
        self.ch = {(a, b): deque() for a in range(n) for b in range(n) if a != b}
        self.learns = []  # (node, value)
        self.proposals = []
        self.satisfied = []

    def _out(self, i, out):
        for m in out.messages:
            assert m.sender == i and m.receiver != i
            self.ch[(m.sender, m.receiver)].append(m)
        for w, done in out.learns:
            self.learns.append((i, w))
            self.satisfied.extend(done)

    def step(self, i, inp):
        before = self.s[i]
        self.s[i], out = la_step(before, inp, fire_guards=not self.lazy)
        self._out(i, out)
        return before, out

    def propose(self, i, v):
        self.proposals.append(v)
        return self.step(i, AppPropose(v))

    def deliver(self, a, b):
        return self.step(b, Deliver(self.ch[(a, b)].popleft()))

    def busy(self):
        return [c for c, q in self.ch.items() if q]

    def drain(self):
        while True:
            if self.busy():
                self.deliver(*self.busy()[0])
            elif self.lazy and any(la_guard_enabled(s) for s in self.s):
                self.step(next(i for i, s in enumerate(self.s) if la_guard_enabled(s)), InternalTick())
            else:
                return


def test_init_examples():
    s = la_init(0, 3, 1)
    assert la_learned(s).is_bottom() and s.pending == {}
    assert la_init(0, 1, 0).quorum == 1
    with pytest.raises(LaError):
        la_init(0, 4, 2)
    with pytest.raises(LaError):
        la_init(3, 3, 1)


def test_single_node_learns_after_tick():
    s = la_init(0, 1, 0)
    v = upd(1, 0, 1, "a")
    s, out = la_step(s, AppPropose(v), fire_guards=False)
    assert out.learns == [] and la_guard_enabled(s)
    s, out = la_step(s, InternalTick())
    assert la_learned(s) == v and out.learns == [(v, (v,))]
    assert not la_guard_enabled(s)


def test_single_node_eager_learns_in_same_step():
    s, out = la_step(la_init(0, 1, 0), AppPropose(upd(1, 0, 1, "a")))
    assert [w for w, _ in out.learns] == [upd(1, 0, 1, "a")]


def test_la_step_is_pure():
    s = la_init(0, 3, 1)
    snap = (s.mpool, s.proposing, dict(s.pending), s.out_seq)
    s2, _ = la_step(s, AppPropose(upd(3, 0, 1, "a")))
    assert (s.mpool, s.proposing, dict(s.pending), s.out_seq) == snap
    assert s2 is not s and s2.proposing == upd(3, 0, 1, "a")


def test_propose_sends_request_then_propose_to_every_other_node():
    _, out = la_step(la_init(0, 3, 1), AppPropose(upd(3, 0, 1, "a")))
    kinds = [(m.kind, m.receiver) for m in out.messages]
    assert kinds == [(Kind.REQUEST, 1), (Kind.REQUEST, 2), (Kind.PROPOSE, 1), (Kind.PROPOSE, 2)]
    assert [m.seq for m in out.messages] == [0, 0, 1, 1]


def test_propose_relay_goes_to_everyone_but_self():
    v = upd(3, 0, 1, "a")
    s, out = la_step(la_init(1, 3, 1), Deliver(LaMessage(Kind.PROPOSE, v, 0, 1, 0)))
    relays = [m for m in out.messages if m.kind is Kind.PROPOSE and m.value == v]
    assert sorted(m.receiver for m in relays) == [0, 2]
    assert s.pending[v] == frozenset({0, 1})


def test_quorum_formed_by_incoming_message_learns_in_same_event():
    net = Net(3, 1)
    v = upd(3, 0, 1, "a")
    net.propose(0, v)
    net.deliver(0, 1)
    while True:
        msg = net.ch[(1, 0)][0]
        _, out = net.deliver(1, 0)
        if out.learns:
            break
    # node 1's PROPOSE gives node 0 its second supporter and the learn fires in that event
    assert msg.kind is Kind.PROPOSE
    assert [w for w, _ in out.learns] == [v]
    assert la_learned(net.s[0]) == v


def test_accept_adopted_mid_proposal():
    net = Net(3, 1)
    a, b = upd(3, 0, 1, "a"), upd(3, 1, 1, "b")
    net.propose(0, a)
    net.propose(1, b)
    w = join(a, b)
    s = net.s[1]
    assert s.proposing == b
    s2, out = la_step(s, Deliver(LaMessage(Kind.ACCEPT, w, 2, 1, 0)))
    assert s2.proposing.is_bottom() and la_learned(s2) == w
    assert (w, (b,)) in out.learns
    assert {m.receiver for m in out.messages if m.kind is Kind.ACCEPT} == {0, 2}


def test_accept_equal_to_learned_is_not_rebroadcast():
    net = Net(3, 1)
    v = upd(3, 0, 1, "a")
    net.propose(0, v)
    net.drain()
    s = net.s[1]
    seq = s.in_seq[2]
    _, out = la_step(s, Deliver(LaMessage(Kind.ACCEPT, la_learned(s), 2, 1, seq)))
    assert out.messages == [] and out.learns == []


def test_stale_accept_ignored():
    net = Net(3, 1)
    a = upd(3, 0, 1, "a")
    net.propose(0, a)
    s = net.s[0]
    _, out = la_step(s, Deliver(LaMessage(Kind.ACCEPT, upd(3, 1, 1, "b"), 1, 0, 0)))
    assert out.learns == [] and s.proposing == a


def test_request_already_covered_is_not_relayed():
    net = Net(3, 1)
    v = upd(3, 0, 1, "a")
    net.propose(0, v)
    net.deliver(0, 1)
    s = net.s[1]
    _, out = la_step(s, Deliver(LaMessage(Kind.REQUEST, v, 2, 1, 0)))
    assert out.messages == []


@pytest.mark.parametrize("msg, err", [
    (LaMessage(Kind.REQUEST, upd(3, 0, 1, "a"), 1, 0, 5), "FIFO"),
    (LaMessage(Kind.REQUEST, upd(3, 0, 1, "a"), 0, 0, 0), "unknown sender"),
    (LaMessage(Kind.REQUEST, upd(3, 0, 1, "a"), 7, 0, 0), "unknown sender"),
    (LaMessage(Kind.REQUEST, upd(3, 0, 1, "a"), 1, 2, 0), "addressed"),
    (LaMessage(Kind.REQUEST, upd(2, 0, 1, "a"), 1, 0, 0), "dimensions"),
])
def test_malformed_input_rejected(msg, err):
    with pytest.raises(LaError, match=err):
        la_step(la_init(0, 3, 1), Deliver(msg))


def test_bad_proposal_dimensions_rejected():
    with pytest.raises(LaError):
        la_step(la_init(0, 3, 1), AppPropose(upd(2, 0, 1, "a")))


def _check_invariants(net, prev):
    for i, s in enumerate(net.s):
        assert leq(prev[i].learned, s.learned)
        for v, sup in prev[i].pending.items():
            assert sup <= s.pending[v]
        if not la_guard_enabled(s):
            # lazy nodes reach the guard fixpoint only on a tick
            for v, sup in s.pending.items():
                if len(sup) >= s.quorum:
                    assert leq(v, s.validated)
        assert leq(s.learned, s.validated) or s.learned == s.validated


@settings(max_examples=60, deadline=None)
@given(st.data())
def test_random_schedules_keep_agreement_properties(data):
    n = data.draw(st.integers(1, 4))
    f = data.draw(st.integers(0, (n - 1) // 2))
    lazy = data.draw(st.booleans())
    net = Net(n, f, lazy)
    writes = [0] * n
    todo = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=6))
    while todo or net.busy() or (lazy and any(la_guard_enabled(s) for s in net.s)):
        prev = [s.copy() for s in net.s]
        choices = ["propose"] * bool(todo) + ["deliver"] * bool(net.busy())
        if lazy and any(la_guard_enabled(s) for s in net.s):
            choices.append("tick")
        act = data.draw(st.sampled_from(choices))
        if act == "propose":
            i = todo.pop(0)
            writes[i] += 1
            net.propose(i, upd(n, i, writes[i], f"v{len(net.proposals)}"))
        elif act == "deliver":
            net.deliver(*data.draw(st.sampled_from(sorted(net.busy()))))
        else:
            net.step(data.draw(st.sampled_from([i for i, s in enumerate(net.s) if la_guard_enabled(s)])),
                     InternalTick())
        _check_invariants(net, prev)
    bottom = LatticeConfig.square(n).bottom()
    values = [w for _, w in net.learns]
    assert all(comparable(a, b) for a, b in itertools.combinations(values, 2))
    for w in values:
        assert join_all([p for p in net.proposals if leq(p, w)], bottom) == w
    # the run drained every channel, so every proposal was learned
    assert sorted(map(repr, net.satisfied)) == sorted(map(repr, net.proposals))
    assert all(s.proposing.is_bottom() or leq(s.proposing, s.learned) for s in net.s)


def test_la_apply_in_place_matches_la_step():
    a, b = la_init(0, 3, 1), la_init(0, 3, 1)
    v = upd(3, 0, 1, "a")
    out1 = la_apply(a, AppPropose(v))
    b2, out2 = la_step(b, AppPropose(v))
    assert out1 == out2 and a.proposing == b2.proposing and b.proposing.is_bottom()
