"""Deterministic discrete-event simulator for crash-prone asynchronous systems.

Every event is one of: an application call at a node, the delivery of the
head message of one FIFO channel, a guard firing (tick) at a node with
deferred guards, or the one-shot start event in which every live node
proposes its initial value.  Crashes are not events: a crashed node stops
taking steps and, unless asked otherwise, its in-flight messages vanish.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

from lasim.trace import Effects, Event, ExecutionTrace, MessageRecord, Msg, Operation

Action = tuple


class SimError(RuntimeError):
    """An action was requested that the execution model does not allow."""


class Node(Protocol):
    lazy: bool

    @property
    def busy(self) -> bool: ...

    def guard_enabled(self) -> bool: ...

    def on_call(self, op: Operation) -> Effects: ...

    def on_message(self, src: int, seq: int, msg: Msg) -> Effects: ...

    def on_tick(self) -> Effects: ...


@dataclass(frozen=True)
class Crash:
    """Crash ``node`` before event ``at_step``, or right after its ``k``-th send of ``kind``.

    With ``keep_in_flight`` the messages already sent stay deliverable (for
    an ``after_sends`` trigger: up to and including the triggering send).
    """
    node: int
    at_step: int | None = None
    after_sends: tuple[str, int] | None = None
    keep_in_flight: bool = False


@dataclass(frozen=True)
class FaultPlan:
    crashes: tuple[Crash, ...] = ()


@dataclass(frozen=True)
class Workload:
    """Per-node sequences of calls; op ids are positions in ``ops``.

    ``start`` marks a one-shot run: every node proposes ``initial[node]`` at
    a single start event instead of taking calls.
    """
    ops: tuple[tuple[int, str, tuple], ...] = ()
    start: bool = False
    initial: tuple = ()


@dataclass
class Simulation:
    nodes: Sequence[Any]
    f: int
    workload: Workload = field(default_factory=Workload)
    faults: FaultPlan = field(default_factory=FaultPlan)
    seed: int | None = None
    protocol: str = ""
    budget: int | None = None

    def __post_init__(self):
        n = len(self.nodes)
        if n < 1:
            raise SimError("a system needs at least one node")
        if self.f < 0 or 2 * self.f >= n:
            raise SimError(f"fault bound must satisfy 0 <= f < n/2, got f={self.f} n={n}")
        if len(self.faults.crashes) > self.f:
            raise SimError(f"fault plan crashes {len(self.faults.crashes)} nodes but f={self.f}")
        self.n = n
        self.trace = ExecutionTrace(n=n, f=self.f, seed=self.seed, protocol=self.protocol)
        self.channels: dict[tuple[int, int], deque[int]] = {}
        self.send_seq: dict[tuple[int, int], int] = {}
        self.crashed: set[int] = set()
        self.queues: list[deque[Operation]] = [deque() for _ in range(n)]
        for op_id, (node, kind, args) in enumerate(self.workload.ops):
            if not 0 <= node < n:
                raise SimError(f"workload names unknown node {node}")
            self.queues[node].append(Operation(op_id, node, kind, tuple(args)))
        self.next_op_id = len(self.workload.ops)
        self.outstanding: dict[int, int] = {}
        self.started = not self.workload.start
        self.send_counts: dict[tuple[int, str], int] = {}
        self.pending_crashes = list(self.faults.crashes)
        if self.budget is None:
            calls = len(self.workload.ops) + (n if self.workload.start else 0)
            self.budget = 50 * n * n * (calls + 1)

    # queries ---------------------------------------------------------------

    @property
    def events(self) -> list[Event]:
        return self.trace.events

    def alive(self, node: int) -> bool:
        return node not in self.crashed

    def correct(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.crashed]

    def head(self, src: int, dst: int) -> int | None:
        q = self.channels.get((src, dst))
        return q[0] if q else None

    def in_flight(self) -> list[int]:
        return sorted(m for q in self.channels.values() for m in q)

    def message(self, mid: int) -> MessageRecord:
        return self.trace.messages[mid]

    def idle(self, node: int) -> bool:
        return node not in self.outstanding and not self.nodes[node].busy

    def enabled(self) -> list[Action]:
        """All enabled actions, in a fixed deterministic order."""
        if not self.started:
            return [("start",)]
        acts: list[Action] = []
        for i in range(self.n):
            if i not in self.crashed and self.queues[i] and self.idle(i):
                acts.append(("call", i))
        for (src, dst), q in sorted(self.channels.items()):
            if q and dst not in self.crashed:
                acts.append(("deliver", q[0]))
        for i in range(self.n):
            if i not in self.crashed and self.nodes[i].lazy and self.nodes[i].guard_enabled():
                acts.append(("tick", i))
        return acts

    def work_done(self) -> bool:
        return all(
            not self.queues[i] and self.idle(i) for i in range(self.n) if i not in self.crashed
        ) and self.started

    # micro-steps -----------------------------------------------------------

    def perform(self, act: Action) -> None:
        kind = act[0]
        if kind == "call":
            self.inject_call(act[1], act[2] if len(act) > 2 else None)
        elif kind == "deliver":
            self.deliver(act[1])
        elif kind == "tick":
            self.fire_guard(act[1])
        elif kind == "start":
            self.start()
        elif kind == "crash":
            self.crash(act[1], keep_in_flight=bool(act[2]) if len(act) > 2 else False)
        else:
            raise SimError(f"unknown action {act!r}")

    def new_operation(self, node: int, kind: str, args: tuple) -> Operation:
        op = Operation(self.next_op_id, node, kind, tuple(args))
        self.next_op_id += 1
        return op

    def inject_call(self, node: int, op: Operation | None = None) -> Event:
        self._check_alive(node)
        if not self.started:
            raise SimError("one-shot run has not started")
        if not self.idle(node):
            raise SimError(f"node {node} already has an outstanding operation")
        if op is None:
            if not self.queues[node]:
                raise SimError(f"node {node} has no pending call")
            op = self.queues[node].popleft()
        self.outstanding[node] = op.op_id
        eff = self.nodes[node].on_call(op)
        return self._record("call", (node,), (), {node: eff}, calls=(op,))

    def deliver(self, mid: int) -> Event:
        m = self.trace.messages.get(mid)
        if m is None:
            raise SimError(f"unknown message id {mid}")
        q = self.channels.get((m.src, m.dst))
        if not q or mid not in q:
            raise SimError(f"message {mid} is not in the buffer")
        if q[0] != mid:
            raise SimError(f"message {mid} is not at the head of channel {m.src}->{m.dst}")
        self._check_alive(m.dst)
        q.popleft()
        m.delivered_at = len(self.trace.events)
        eff = self.nodes[m.dst].on_message(m.src, m.seq, m.msg)
        return self._record("deliver", (m.dst,), (mid,), {m.dst: eff})

    def fire_guard(self, node: int) -> Event:
        self._check_alive(node)
        if not (self.nodes[node].lazy and self.nodes[node].guard_enabled()):
            raise SimError(f"node {node} has no enabled guard")
        eff = self.nodes[node].on_tick()
        return self._record("tick", (node,), (), {node: eff})

    def start(self) -> Event:
        if self.started:
            raise SimError("one-shot run already started")
        self.started = True
        live = tuple(i for i in range(self.n) if i not in self.crashed)
        calls, effs = [], {}
        for i in live:
            op = self.new_operation(i, "propose", (self.workload.initial[i],))
            calls.append(op)
            self.outstanding[i] = op.op_id
            effs[i] = self.nodes[i].start(op)
        return self._record("start", live, (), effs, calls=tuple(calls))

    def crash(self, node: int, keep_in_flight: bool = False, keep_ids: frozenset[int] = frozenset()) -> None:
        """Crash ``node`` now; its undelivered messages are dropped unless kept."""
        self._check_alive(node)
        if len(self.crashed) + 1 > self.f:
            raise SimError(f"crashing node {node} would exceed f={self.f}")
        self.crashed.add(node)
        self.trace.crashed[node] = len(self.trace.events)
        self.queues[node].clear()
        if keep_in_flight:
            return
        for (src, _), q in self.channels.items():
            if src == node:
                kept = [mid for mid in q if mid in keep_ids]
                q.clear()
                q.extend(kept)

    def _check_alive(self, node: int) -> None:
        if not 0 <= node < self.n:
            raise SimError(f"unknown node {node}")
        if node in self.crashed:
            raise SimError(f"node {node} has crashed")

    def _record(self, kind: str, nodes: tuple[int, ...], receives: tuple[int, ...],
                effs: dict[int, Effects], calls: tuple[Operation, ...] = ()) -> Event:
        eid = len(self.trace.events)
        sends, replies, proposals, learns = [], [], [], []
        triggered: list[tuple[Crash, frozenset[int]]] = []
        for node in nodes:
            eff = effs[node]
            sent_here: list[int] = []
            for dst, msg in eff.sends:
                mid = len(self.trace.messages)
                ch = (node, dst)
                seq = self.send_seq.get(ch, 0)
                self.send_seq[ch] = seq + 1
                self.trace.messages[mid] = MessageRecord(mid, node, dst, seq, msg, eid)
                self.channels.setdefault(ch, deque()).append(mid)
                sends.append(mid)
                sent_here.append(mid)
                key = (node, msg.kind)
                self.send_counts[key] = self.send_counts.get(key, 0) + 1
                for c in self.pending_crashes:
                    if (c.node == node and c.after_sends == (msg.kind, self.send_counts[key])
                            and all(c is not t for t, _ in triggered)):
                        triggered.append((c, frozenset(sent_here) if c.keep_in_flight else frozenset()))
            for r in eff.replies:
                if self.outstanding.get(r.node) == r.op_id:
                    del self.outstanding[r.node]
                replies.append(r)
            proposals.extend(eff.proposals)
            learns.extend((node, v) for v in eff.learns)
        ev = Event(eid, kind, nodes, receives, tuple(sends), calls,
                   tuple(replies), tuple(proposals), tuple(learns))
        self.trace.events.append(ev)
        for c, keep in triggered:
            self.pending_crashes.remove(c)
            if c.node not in self.crashed:
                if c.keep_in_flight:
                    # messages from earlier events stay, later sends of this event vanish
                    earlier = {m for q in self.channels.values() for m in q
                               if self.trace.messages[m].src == c.node and self.trace.messages[m].sent_at < eid}
                    self.crash(c.node, keep_ids=frozenset(keep | earlier))
                else:
                    self.crash(c.node)
        return ev

    def _step_crashes(self) -> None:
        now = len(self.trace.events)
        for c in list(self.pending_crashes):
            if c.at_step is not None and now >= c.at_step:
                self.pending_crashes.remove(c)
                if c.node not in self.crashed:
                    self.crash(c.node, keep_in_flight=c.keep_in_flight)

    # driver ----------------------------------------------------------------

    def run(self, schedule: Schedule, stop: Callable[[Simulation], bool] | None = None) -> ExecutionTrace:
        outcome = ""
        while True:
            self._step_crashes()
            if stop is not None and stop(self):
                outcome = "stopped"
                break
            if len(self.trace.events) >= self.budget:
                outcome = "budget"
                break
            act = schedule.choose(self)
            if act is None:
                if self.enabled():
                    outcome = "stopped"
                else:
                    outcome = "quiescent" if self.work_done() else "deadlock"
                break
            self.perform(act)
        self.trace.outcome = outcome
        return self.trace


class Schedule(Protocol):
    def choose(self, sim: Simulation) -> Action | None: ...


class Fair:
    """Seeded uniform choice among enabled actions."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = random.Random(seed)

    def choose(self, sim: Simulation) -> Action | None:
        acts = sim.enabled()
        return self.rng.choice(acts) if acts else None


class ContentionBurst(Fair):
    """Fair, except that every enabled call fires before anything else."""

    def choose(self, sim: Simulation) -> Action | None:
        acts = sim.enabled()
        for a in acts:
            if a[0] in ("call", "start"):
                return a
        return self.rng.choice(acts) if acts else None


class OldestFirst:
    """Calls first, then the oldest deliverable message, then guard ticks.

    Every causal layer of messages then ends up in its own round, which
    makes latencies as long as the protocol's message chains allow.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def choose(self, sim: Simulation) -> Action | None:
        acts = sim.enabled()
        if not acts:
            return None
        return min(acts, key=_oldest_key)


def _oldest_key(a: Action) -> tuple:
    if a[0] in ("start", "call"):
        return (0, a[1] if len(a) > 1 else 0)
    if a[0] == "deliver":
        return (1, a[1])
    return (2, a[1])


class Scripted:
    """Replay explicit choices, then hand over to ``then`` (or stop).

    Items: ``("call", node)`` takes the node's next workload call,
    ``("call", node, kind, args)`` issues an ad-hoc call,
    ``("deliver", src, dst)`` delivers the head of a channel,
    ``("deliver_id", mid)``, ``("tick", node)``, ``("crash", node)``, ``("start",)``.
    """

    def __init__(self, script: Sequence[tuple], then: Schedule | None = None):
        self.script = list(script)
        self.pos = 0
        self.then = then

    def choose(self, sim: Simulation) -> Action | None:
        while self.pos < len(self.script):
            item = tuple(self.script[self.pos])
            self.pos += 1
            kind = item[0]
            if kind == "crash":
                sim.crash(item[1], keep_in_flight=bool(item[2]) if len(item) > 2 else False)
                continue
            if kind == "call" and len(item) == 4:
                return ("call", item[1], sim.new_operation(item[1], item[2], tuple(item[3])))
            if kind == "deliver" and len(item) == 3:
                mid = sim.head(item[1], item[2])
                if mid is None:
                    raise SimError(f"script step {self.pos - 1}: channel {item[1]}->{item[2]} is empty")
                return ("deliver", mid)
            if kind == "deliver_id":
                return ("deliver", item[1])
            return item
        return self.then.choose(sim) if self.then is not None else None


def run(nodes: Sequence[Any], schedule: Schedule, f: int, faults: FaultPlan | None = None,
        workload: Workload | None = None, stop: Callable[[Simulation], bool] | None = None,
        seed: int | None = None, protocol: str = "", budget: int | None = None) -> ExecutionTrace:
    sim = Simulation(nodes, f, workload or Workload(), faults or FaultPlan(), seed, protocol, budget)
    return sim.run(schedule, stop)
