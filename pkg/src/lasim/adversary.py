"""Adversarial schedules.

* :class:`ActiveFaultyDelay`: faulty nodes stay silent until the moment a
  correct node is about to learn the target operation's value; then one of
  them proposes a fresh value, gets it to every correct node and crashes.
* :class:`GargHalfSplit`: the round-by-round construction that keeps the
  view-array protocol from forming an equivalence quorum for about f/2 rounds.
"""

from __future__ import annotations

from typing import Iterator

from lasim.la import Deliver, Kind, LaMessage, la_step
from lasim.lattice import leq
from lasim.sim import Action, Fair, SimError, Simulation, _oldest_key


class ActiveFaultyDelay(Fair):
    """Delay operation ``target`` using up to ``k`` faulty introducers.

    ``faulty`` nodes take no step and receive nothing until activated.  An
    activation injects an update call at the next faulty node, delivers its
    first messages (REQUEST and PROPOSE of a fresh value) to every correct
    node, and crashes it.  It fires just before a delivery whose lookahead
    shows a correct node learning the target's proposal.

    Between activations messages go oldest first (``base="oldest"``) or in
    seeded random order (``base="fair"``).
    """

    def __init__(self, k: int, faulty: tuple[int, ...], target: int, seed: int = 0, base: str = "oldest"):
        super().__init__(seed)
        if base not in ("oldest", "fair"):
            raise ValueError(f"unknown base order {base!r}")
        self.base = base
        if k > len(faulty):
            raise ValueError(f"k={k} exceeds the {len(faulty)} faulty nodes")
        self.k = k
        self.faulty = list(faulty)
        self.target = target
        self.used = 0
        self.value = None
        self.scanned = 0

    def _target_value(self, sim: Simulation):
        while self.value is None and self.scanned < len(sim.events):
            for p in sim.events[self.scanned].proposals:
                if p.op_id == self.target:
                    self.value = p.value
            self.scanned += 1
        return self.value

    def _would_learn(self, sim: Simulation, act: Action, v) -> bool:
        if act[0] != "deliver":
            return False
        m = sim.message(act[1])
        node = sim.nodes[m.dst]
        _, out = la_step(node.la, Deliver(LaMessage(Kind(m.msg.kind), m.msg.value, m.src, m.dst, m.seq)),
                         fire_guards=not node.lazy)
        return any(leq(v, w) for w, _ in out.learns)

    def _activate(self, sim: Simulation) -> None:
        node = self.faulty[self.used]
        self.used += 1
        sim.inject_call(node, sim.new_operation(node, "update", (f"z{node}",)))
        for dst in sim.correct():
            if dst in self.faulty:
                continue
            while sim.head(node, dst) is not None:
                sim.deliver(sim.head(node, dst))
        sim.crash(node)

    def choose(self, sim: Simulation) -> Action | None:
        silent = set(self.faulty[self.used:])
        acts = [a for a in sim.enabled()
                if not (a[0] == "deliver" and sim.message(a[1]).dst in silent)
                and not (a[0] in ("call", "tick") and a[1] in silent)]
        if not acts:
            for node in sorted(silent):
                if node not in sim.crashed:
                    sim.crash(node)
            acts = sim.enabled()
            if not acts:
                return None
        act = min(acts, key=_oldest_key) if self.base == "oldest" else self.rng.choice(acts)
        if self.used < self.k:
            v = self._target_value(sim)
            owner = sim.workload.ops[self.target][0]
            if v is not None and sim.outstanding.get(owner) == self.target and self._would_learn(sim, act, v):
                self._activate(sim)
                return self.choose(sim)
        return act


class GargHalfSplit(Fair):
    """Scripted bad case for the view-array protocol with n = 2f + 1.

    Correct nodes are ``0..f`` (node 0 plays the distinguished correct
    process); ``A`` and ``B`` split the faulty nodes in halves.  After the
    construction runs out of faulty values the schedule turns fair.
    """

    def __init__(self, f: int, seed: int = 0):
        super().__init__(seed)
        if f < 2 or f % 2:
            raise ValueError(f"the split needs an even f >= 2, got {f}")
        self.f = f
        half = f // 2
        self.lc = 0
        self.A = list(range(f + 1, f + 1 + half))
        self.B = list(range(f + 1 + half, 2 * f + 1))
        self._plan: Iterator[Action] | None = None

    def choose(self, sim: Simulation) -> Action | None:
        if self._plan is None:
            self._plan = self._construction(sim)
        for act in self._plan:
            return act
        return super().choose(sim)

    def _deliver_until(self, sim: Simulation, src: int, dst: int, value) -> Iterator[Action]:
        """Deliver src->dst in FIFO order up to and including the first message carrying ``value``."""
        while True:
            mid = sim.head(src, dst)
            if mid is None or dst in sim.crashed:
                return
            yield ("deliver", mid)
            if sim.message(mid).msg.value == value:
                return

    def _flush(self, sim: Simulation, mids: list[int], first: int) -> Iterator[Action]:
        """Deliver a snapshot of in-flight messages, sender ``first`` before the rest."""
        mids = sorted(mids, key=lambda m: (sim.message(m).src != first, m))
        for mid in mids:
            m = sim.message(mid)
            if m.src in sim.crashed or m.dst in sim.crashed or m.delivered_at is not None:
                continue
            # FIFO: anything queued ahead on the channel goes first
            while sim.head(m.src, m.dst) != mid:
                yield ("deliver", sim.head(m.src, m.dst))
            yield ("deliver", mid)

    def _construction(self, sim: Simulation) -> Iterator[Action]:
        if sim.n != 2 * self.f + 1:
            raise SimError(f"GargHalfSplit needs n = 2f + 1 = {2 * self.f + 1}, got n={sim.n}")
        yield ("start",)
        values = {i: sim.workload.initial[i] for i in range(sim.n)}
        x = [values[a] for a in self.A]
        targets = [b for b in self.B] + [self.lc]
        # round 1
        for dst in targets:
            yield from self._deliver_until(sim, self.A[0], dst, x[0])
        holder = self.B[0]
        for a in self.A[1:]:
            yield from self._deliver_until(sim, a, holder, values[a])
        for a in self.A:
            sim.crash(a)
        start_msgs = [mid for mid in sim.in_flight() if sim.message(mid).sent_at == 0]
        yield from self._flush(sim, start_msgs, self.lc)
        # round i + 1
        for i in range(1, len(self.A)):
            snapshot = sim.in_flight()
            live_b = [b for b in self.B if b not in sim.crashed]
            for dst in [b for b in live_b if b != holder] + [self.lc]:
                yield from self._deliver_until(sim, holder, dst, x[i])
            nxt = self.B[i] if i < len(self.B) else None
            if nxt is not None:
                for v in x[i + 1:]:
                    yield from self._deliver_until(sim, holder, nxt, v)
            sim.crash(holder)
            yield from self._flush(sim, snapshot, self.lc)
            if nxt is None:
                break
            holder = nxt
