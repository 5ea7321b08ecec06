"""One-shot lattice agreement baselines: proposer/acceptor and view-array.

Each node starts with a single initial value at the start event and learns
exactly once.  Both run under the same simulator and metrics as the
long-lived protocol, with the same node interface as :class:`~lasim.aso.AsoNode`.
"""

from __future__ import annotations

from lasim.lattice import AsoVector, LatticeConfig, leq, make_update_vector
from lasim.trace import Effects, Msg, Operation, Proposal, Reply


class OneShotError(ValueError):
    pass


def initial_value(cfg: LatticeConfig, i: int) -> AsoVector:
    """Distinct initial value for node ``i`` (one register cell set)."""
    return make_update_vector(cfg, i, 1, f"x{i}")


class _OneShotNode:
    protocol = ""

    def __init__(self, me: int, n: int, f: int, cfg: LatticeConfig | None = None):
        if not 0 <= me < n:
            raise OneShotError(f"node id {me} out of range for n={n}")
        if f < 0 or 2 * f >= n:
            raise OneShotError(f"fault bound must satisfy 0 <= f < n/2, got f={f} n={n}")
        self.me, self.n, self.f = me, n, f
        self.cfg = cfg or LatticeConfig.square(n)
        self.bottom = self.cfg.bottom()
        self.started = False
        self.learned: AsoVector | None = None
        self.op: Operation | None = None
        self.lazy = False

    @property
    def busy(self) -> bool:
        return self.started and self.learned is None

    def guard_enabled(self) -> bool:
        return False

    def on_tick(self) -> Effects:
        return Effects()

    def on_call(self, op: Operation) -> Effects:
        raise OneShotError(f"{self.protocol}: one-shot node takes no application calls")

    def start(self, op: Operation) -> Effects:
        if self.started:
            raise OneShotError(f"node {self.me}: already proposed")
        self.started = True
        self.op = op
        (v,) = op.args
        eff = self._start(v)
        # the initial value is the node's only input; re-proposals are joins of inputs
        eff.proposals.insert(0, Proposal(self.me, op.op_id, v))
        return eff

    def _learn(self, v: AsoVector, eff: Effects) -> None:
        self.learned = v
        eff.learns.append(v)
        eff.replies.append(Reply(self.op.op_id, self.me, v, v))

    def _broadcast(self, eff: Effects, msg: Msg) -> None:
        eff.sends.extend((j, msg) for j in range(self.n) if j != self.me)

    def _start(self, v: AsoVector) -> Effects:
        raise NotImplementedError


class FaleiroNode(_OneShotNode):
    """Every node is both proposer and acceptor; majority = n // 2 + 1."""

    protocol = "faleiro"

    def __init__(self, me: int, n: int, f: int, cfg: LatticeConfig | None = None):
        super().__init__(me, n, f, cfg)
        self.majority = n // 2 + 1
        self.accepted = self.bottom
        self.proposal = self.bottom
        self.number = 0
        self.first_proposal: AsoVector | None = None
        self.reproposals = 0
        self.replies: set[int] = set()
        self.nacked = False
        self.nack_join = self.bottom

    def _start(self, v: AsoVector) -> Effects:
        self.first_proposal = v
        eff = Effects()
        self._propose(v, eff)
        return eff

    def _propose(self, v: AsoVector, eff: Effects) -> None:
        self.proposal = v
        self.number += 1
        self.replies = set()
        self.nacked = False
        self.nack_join = self.bottom
        self._broadcast(eff, Msg("PROPOSAL", v, self.number))
        # the local acceptor answers without a message
        ack, acc = self._accept(v)
        self._on_reply(self.me, ack, acc, eff)

    def _accept(self, p: AsoVector) -> tuple[bool, AsoVector]:
        ok = leq(self.accepted, p)
        self.accepted = self.accepted | p
        return ok, self.accepted

    def on_message(self, src: int, seq: int, msg: Msg) -> Effects:
        eff = Effects()
        if msg.kind == "PROPOSAL":
            ok, acc = self._accept(msg.value)
            if ok:
                eff.sends.append((src, Msg("ACK", None, msg.tag)))
            else:
                eff.sends.append((src, Msg("NACK", acc, msg.tag)))
        elif msg.kind in ("ACK", "NACK"):
            if self.learned is None and msg.tag == self.number:
                self._on_reply(src, msg.kind == "ACK", msg.value, eff)
        else:
            raise OneShotError(f"unknown message kind {msg.kind!r}")
        return eff

    def _on_reply(self, src: int, ack: bool, value: AsoVector | None, eff: Effects) -> None:
        if src in self.replies:
            return
        self.replies.add(src)
        if not ack:
            self.nacked = True
            self.nack_join = self.nack_join | value
        if len(self.replies) < self.majority:
            return
        if not self.nacked:
            self._learn(self.proposal, eff)
        else:
            self.reproposals += 1
            self._propose(self.proposal | self.nack_join, eff)


class GargNode(_OneShotNode):
    """View-array protocol: relay every new value, learn on an equivalence quorum."""

    protocol = "garg"

    def __init__(self, me: int, n: int, f: int, cfg: LatticeConfig | None = None):
        super().__init__(me, n, f, cfg)
        self.view = [self.bottom] * n

    def _start(self, v: AsoVector) -> Effects:
        eff = Effects()
        self.view[self.me] = v
        self._broadcast(eff, Msg("VALUE", v))
        self._check(eff)
        return eff

    def on_message(self, src: int, seq: int, msg: Msg) -> Effects:
        if msg.kind != "VALUE":
            raise OneShotError(f"unknown message kind {msg.kind!r}")
        eff = Effects()
        x = msg.value
        self.view[src] = self.view[src] | x
        if not leq(x, self.view[self.me]):
            self.view[self.me] = self.view[self.me] | x
            self._broadcast(eff, Msg("VALUE", x))
        self._check(eff)
        return eff

    def equivalence_quorum(self) -> bool:
        mine = self.view[self.me]
        return sum(1 for v in self.view if v == mine) >= self.n - self.f

    def _check(self, eff: Effects) -> None:
        if self.learned is None and self.started and self.equivalence_quorum():
            self._learn(self.view[self.me], eff)


class BroadcastNode:
    """Reliable broadcast: the caller sends its value, every first receipt is relayed.

    Used to script the small metric fixtures; operations never reply.
    """

    protocol = "broadcast"

    def __init__(self, me: int, n: int, f: int = 0, cfg: LatticeConfig | None = None):
        self.me, self.n = me, n
        self.seen: set = set()
        self.lazy = False

    @property
    def busy(self) -> bool:
        return False

    def guard_enabled(self) -> bool:
        return False

    def on_tick(self) -> Effects:
        return Effects()

    def on_call(self, op: Operation) -> Effects:
        (v,) = op.args
        return self._relay(v)

    def on_message(self, src: int, seq: int, msg: Msg) -> Effects:
        if msg.value in self.seen:
            return Effects()
        return self._relay(msg.value)

    def _relay(self, v) -> Effects:
        self.seen.add(v)
        return Effects(sends=[(j, Msg("BCAST", v)) for j in range(self.n) if j != self.me])
