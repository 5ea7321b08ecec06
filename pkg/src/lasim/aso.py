"""Atomic snapshot on top of long-lived lattice agreement.

The client side is a small pure state machine (:class:`AsoClientState`) that
turns update/snapshot calls into lattice proposals and recognises their
completion in learn reports.  :class:`AsoNode` couples one client with one
:class:`~lasim.la.LaNodeState` behind the simulator's node interface.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Callable

from lasim.la import (
    AppPropose, Deliver, InternalTick, Kind, LaMessage, LaNodeState, LaOutput,
    la_apply, la_guard_enabled, la_init,
)
from lasim.lattice import (
    AsoVector, LatticeConfig, leq, make_snapshot_vector, make_update_vector, project_registers,
)
from lasim.trace import Effects, Msg, Operation, Proposal, Reply

OK = "OK"


class AsoError(ValueError):
    pass


@dataclass(frozen=True)
class Outstanding:
    op_id: int
    kind: str  # "update" | "snapshot" | "update_mw"
    marker: AsoVector
    call_event: int | None = None
    # multi-writer update: target register and payload, phase 1 = snapshot
    target: int | None = None
    payload: Any = None
    phase: int = 1


@dataclass(frozen=True)
class AsoClientState:
    me: int
    cfg: LatticeConfig
    w: int = 0
    r: int = 0
    outstanding: Outstanding | None = None


def aso_client(me: int, cfg: LatticeConfig) -> AsoClientState:
    return AsoClientState(me=me, cfg=cfg)


def _idle(s: AsoClientState) -> None:
    if s.outstanding is not None:
        raise AsoError(f"node {s.me}: operation {s.outstanding.op_id} still outstanding")


def aso_update(s: AsoClientState, i: int, v: Any, op_id: int = 0,
               call_event: int | None = None) -> tuple[AsoClientState, AppPropose]:
    """Single-writer update of register ``i`` (must be the caller's own)."""
    if i != s.me:
        raise AsoError(f"node {s.me} cannot write register {i} (single-writer)")
    _idle(s)
    w = s.w + 1
    marker = make_update_vector(s.cfg, i, w, v)
    return replace(s, w=w, outstanding=Outstanding(op_id, "update", marker, call_event)), AppPropose(marker)


def aso_snapshot(s: AsoClientState, op_id: int = 0, call_event: int | None = None
                 ) -> tuple[AsoClientState, AppPropose, Callable[[AsoVector], list]]:
    _idle(s)
    r = s.r + 1
    marker = make_snapshot_vector(s.cfg, s.me, r)
    out = Outstanding(op_id, "snapshot", marker, call_event)
    return replace(s, r=r, outstanding=out), AppPropose(marker), project_registers


def aso_update_mw(s: AsoClientState, j: int, v: Any, op_id: int = 0,
                  call_event: int | None = None) -> tuple[AsoClientState, AppPropose]:
    """Multi-writer update: snapshot first, then write with a higher count."""
    if not 0 <= j < s.cfg.m:
        raise AsoError(f"register index {j} out of range for m={s.cfg.m}")
    _idle(s)
    r = s.r + 1
    marker = make_snapshot_vector(s.cfg, s.me, r)
    out = Outstanding(op_id, "update_mw", marker, call_event, target=j, payload=v, phase=1)
    return replace(s, r=r, outstanding=out), AppPropose(marker)


@dataclass(frozen=True)
class Completion:
    op_id: int
    result: Any
    witness: AsoVector


def aso_on_learn(s: AsoClientState, learned: AsoVector
                 ) -> tuple[AsoClientState, Completion | None, AppPropose | None]:
    """React to a learn report: maybe complete the op, maybe start MW phase 2."""
    op = s.outstanding
    if op is None or not leq(op.marker, learned):
        return s, None, None
    if op.kind == "update":
        return replace(s, outstanding=None), Completion(op.op_id, OK, learned), None
    if op.kind == "snapshot":
        return replace(s, outstanding=None), Completion(op.op_id, tuple(project_registers(learned)), learned), None
    if op.phase == 1:
        seen = learned.registers[op.target].writes
        marker = make_update_vector(s.cfg, op.target, seen + 1, op.payload)
        nxt = replace(op, marker=marker, phase=2)
        return replace(s, outstanding=nxt), None, AppPropose(marker)
    return replace(s, outstanding=None), Completion(op.op_id, OK, learned), None


class AsoNode:
    """Simulator node: one ASO client over one lattice-agreement automaton.

    With ``lazy=True`` the agreement guards only fire on explicit tick events.
    """

    protocol = "main"

    def __init__(self, me: int, n: int, f: int, lazy: bool = False, cfg: LatticeConfig | None = None):
        self.me = me
        self.lazy = lazy
        self.la: LaNodeState = la_init(me, n, f, cfg)
        self.client = aso_client(me, self.la.cfg)

    @property
    def busy(self) -> bool:
        return self.client.outstanding is not None

    def guard_enabled(self) -> bool:
        return self.lazy and la_guard_enabled(self.la)

    def on_call(self, op: Operation) -> Effects:
        if op.kind == "update":
            (v,) = op.args
            self.client, inp = aso_update(self.client, self.me, v, op.op_id)
        elif op.kind == "snapshot":
            self.client, inp, _ = aso_snapshot(self.client, op.op_id)
        elif op.kind == "update_mw":
            j, v = op.args
            self.client, inp = aso_update_mw(self.client, j, v, op.op_id)
        else:
            raise AsoError(f"unknown operation kind {op.kind!r}")
        eff = Effects(proposals=[Proposal(self.me, op.op_id, inp.value)])
        self._apply(inp, eff)
        return eff

    def on_message(self, src: int, seq: int, msg: Msg) -> Effects:
        eff = Effects()
        self._apply(Deliver(LaMessage(Kind(msg.kind), msg.value, src, self.me, seq)), eff)
        return eff

    def on_tick(self) -> Effects:
        eff = Effects()
        self._apply(InternalTick(), eff)
        return eff

    def _apply(self, inp, eff: Effects) -> None:
        out: LaOutput = la_apply(self.la, inp, fire_guards=not self.lazy)
        self._collect(out, eff)

    def _collect(self, out: LaOutput, eff: Effects) -> None:
        eff.sends.extend((m.receiver, Msg(m.kind.value, m.value)) for m in out.messages)
        for learned, _ in out.learns:
            if not eff.learns or eff.learns[-1] != learned:
                eff.learns.append(learned)
            self._on_learn(learned, eff)

    def _on_learn(self, learned: AsoVector, eff: Effects) -> None:
        self.client, done, nxt = aso_on_learn(self.client, learned)
        if done is not None:
            eff.replies.append(Reply(done.op_id, self.me, done.result, done.witness))
        if nxt is not None:
            eff.proposals.append(Proposal(self.me, self.client.outstanding.op_id, nxt.value))
            out = la_apply(self.la, nxt, fire_guards=not self.lazy)
            self._collect(out, eff)
