"""Long-lived lattice agreement node automaton.

:func:`la_step` is a pure transition function ``(state, input) -> (state,
output)``.  The simulator drives nodes through :func:`la_apply`, the in-place
variant, to avoid copying the pending map on every step.

Handlers run in a fixed order: the handler for the input itself, then the
start-proposal, quorum and learn guards repeatedly until none is enabled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Union

from lasim.lattice import AsoVector, LatticeConfig, join, leq


class LaError(ValueError):
    pass


class Kind(str, enum.Enum):
    REQUEST = "REQUEST"
    PROPOSE = "PROPOSE"
    ACCEPT = "ACCEPT"


@dataclass(frozen=True)
class LaMessage:
    kind: Kind
    value: AsoVector
    sender: int
    receiver: int
    seq: int


@dataclass(frozen=True)
class AppPropose:
    value: AsoVector


@dataclass(frozen=True)
class Deliver:
    msg: LaMessage


@dataclass(frozen=True)
class InternalTick:
    pass


LaInput = Union[AppPropose, Deliver, InternalTick]


@dataclass
class LaOutput:
    messages: list[LaMessage] = field(default_factory=list)
    # (learned value, proposals it satisfied)
    learns: list[tuple[AsoVector, tuple[AsoVector, ...]]] = field(default_factory=list)


@dataclass
class LaNodeState:
    me: int
    n: int
    f: int
    cfg: LatticeConfig
    mpool: AsoVector
    proposing: AsoVector
    validated: AsoVector
    learned: AsoVector
    # value -> ids of distinct supporters
    pending: dict[AsoVector, frozenset[int]]
    pending_ops: tuple[AsoVector, ...] = ()
    # join of pending keys, maintained incrementally
    pending_join: AsoVector | None = None
    # keys whose quorum has already been folded into validated
    quorate: frozenset[AsoVector] = frozenset()
    # keys whose supporter set changed since the last quorum check
    touched: tuple[AsoVector, ...] = ()
    out_seq: tuple[int, ...] = ()
    in_seq: tuple[int, ...] = ()

    @property
    def bottom(self) -> AsoVector:
        return self.cfg.bottom()

    @property
    def quorum(self) -> int:
        return self.n - self.f

    def copy(self) -> LaNodeState:
        # dict values are frozensets, so a shallow dict copy is a full copy
        return replace(self, pending=dict(self.pending))


def la_init(me: int, n: int, f: int, cfg: LatticeConfig | None = None) -> LaNodeState:
    if n < 1:
        raise LaError(f"system size must be positive, got n={n}")
    if not 0 <= me < n:
        raise LaError(f"node id {me} out of range for n={n}")
    if f < 0 or 2 * f >= n:
        raise LaError(f"fault bound must satisfy 0 <= f < n/2, got f={f} n={n}")
    cfg = cfg or LatticeConfig.square(n)
    bot = cfg.bottom()
    return LaNodeState(
        me=me, n=n, f=f, cfg=cfg,
        mpool=bot, proposing=bot, validated=bot, learned=bot,
        pending={}, pending_join=bot,
        out_seq=(0,) * n, in_seq=(0,) * n,
    )


def la_learned(s: LaNodeState) -> AsoVector:
    return s.learned


def la_step(s: LaNodeState, inp: LaInput, fire_guards: bool = True) -> tuple[LaNodeState, LaOutput]:
    s = s.copy()
    out = la_apply(s, inp, fire_guards)
    return s, out


def la_guard_enabled(s: LaNodeState) -> bool:
    if s.proposing.is_bottom() and not s.mpool.is_bottom():
        return True
    if any(len(s.pending[v]) >= s.quorum for v in s.touched if v not in s.quorate):
        return True
    return _learn_ready(s)


def la_apply(s: LaNodeState, inp: LaInput, fire_guards: bool = True) -> LaOutput:
    """Apply one input to ``s`` in place."""
    out = LaOutput()
    if isinstance(inp, AppPropose):
        _check_value(s, inp.value)
        s.mpool = join(s.mpool, inp.value)
        s.pending_ops = s.pending_ops + (inp.value,)
        _send_others(s, out, Kind.REQUEST, inp.value)
    elif isinstance(inp, Deliver):
        _on_deliver(s, inp.msg, out)
    elif isinstance(inp, InternalTick):
        fire_guards = True
    else:
        raise LaError(f"unknown input {inp!r}")
    if fire_guards:
        _run_guards(s, out)
    _report_satisfied(s, out)
    return out


def _check_value(s: LaNodeState, v: AsoVector) -> None:
    if not isinstance(v, AsoVector) or v.dims != (s.cfg.m, s.cfg.n):
        raise LaError(f"value with dimensions {getattr(v, 'dims', None)} does not fit lattice "
                      f"({s.cfg.m}, {s.cfg.n})")


def _on_deliver(s: LaNodeState, msg: LaMessage, out: LaOutput) -> None:
    src = msg.sender
    if not 0 <= src < s.n or src == s.me:
        raise LaError(f"node {s.me}: unknown sender {src}")
    if msg.receiver != s.me:
        raise LaError(f"node {s.me}: message addressed to {msg.receiver}")
    if msg.seq != s.in_seq[src]:
        raise LaError(f"node {s.me}: FIFO violation on channel {src}->{s.me}: "
                      f"expected seq {s.in_seq[src]}, got {msg.seq}")
    _check_value(s, msg.value)
    s.in_seq = s.in_seq[:src] + (msg.seq + 1,) + s.in_seq[src + 1:]
    v = msg.value

    if msg.kind is Kind.REQUEST:
        if not leq(v, join(join(s.mpool, s.proposing), s.learned)):
            s.mpool = join(s.mpool, v)
            _send_others(s, out, Kind.REQUEST, v)
    elif msg.kind is Kind.PROPOSE:
        if v in s.pending:
            _support(s, v, src)
        else:
            _support(s, v, src, s.me)
            _send_others(s, out, Kind.PROPOSE, v)
    elif msg.kind is Kind.ACCEPT:
        if leq(join(s.proposing, s.learned), v):
            grew = s.learned != v
            s.validated = join(s.validated, v)
            s.learned = v
            s.proposing = s.bottom
            if grew:
                out.learns.append((v, ()))
                _send_others(s, out, Kind.ACCEPT, v)
    else:
        raise LaError(f"unknown message kind {msg.kind!r}")


def _support(s: LaNodeState, v: AsoVector, *ids: int) -> None:
    old = s.pending.get(v)
    if old is None:
        s.pending[v] = frozenset(ids)
        s.pending_join = join(s.pending_join, v)
    else:
        new = old.union(ids)
        if new == old:
            return
        s.pending[v] = new
    if v not in s.quorate:
        s.touched = s.touched + (v,)


def _learn_ready(s: LaNodeState) -> bool:
    return leq(s.pending_join, s.validated) and s.learned != s.validated and leq(s.learned, s.validated)


def _run_guards(s: LaNodeState, out: LaOutput) -> None:
    changed = True
    while changed:
        changed = False
        # start proposal
        if s.proposing.is_bottom() and not s.mpool.is_bottom():
            s.proposing = s.mpool
            s.mpool = s.bottom
            _support(s, s.proposing, s.me)
            _send_others(s, out, Kind.PROPOSE, s.proposing)
            changed = True
        # quorum of supporters
        if s.touched:
            touched, s.touched = s.touched, ()
            for v in touched:
                if v not in s.quorate and len(s.pending[v]) >= s.quorum:
                    s.quorate = s.quorate | {v}
                    s.validated = join(s.validated, v)
                    changed = True
        # learn
        if _learn_ready(s):
            s.learned = s.validated
            s.proposing = s.bottom
            out.learns.append((s.learned, ()))
            _send_others(s, out, Kind.ACCEPT, s.learned)
            changed = True


def _report_satisfied(s: LaNodeState, out: LaOutput) -> None:
    if not s.pending_ops:
        return
    done = tuple(v for v in s.pending_ops if leq(v, s.learned))
    if not done:
        return
    s.pending_ops = tuple(v for v in s.pending_ops if not leq(v, s.learned))
    if out.learns:
        last, _ = out.learns[-1]
        out.learns[-1] = (last, done)
    else:
        # proposal already covered by the current learned value
        out.learns.append((s.learned, done))


def _send_others(s: LaNodeState, out: LaOutput, kind: Kind, v: AsoVector) -> None:
    seqs = list(s.out_seq)
    for dst in range(s.n):
        if dst == s.me:
            continue
        out.messages.append(LaMessage(kind, v, s.me, dst, seqs[dst]))
        seqs[dst] += 1
    s.out_seq = tuple(seqs)
