"""Correctness verdicts: lattice-agreement properties and snapshot linearizability.

Two independent linearizability routes are provided.
:func:`linearize_by_learned_order` builds an order from the learned values
that witnessed each operation and then re-verifies it by sequential replay;
:func:`brute_force_linearizable` searches all real-time-respecting orders
of a small history and knows nothing about lattices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

from lasim.lattice import AsoVector, RegisterCell, chain_key, first_incomparable, join, leq
from lasim.trace import ExecutionTrace

BRUTE_FORCE_LIMIT = 8
UPDATE_KINDS = ("update", "update_mw")


class LinearizationError(AssertionError):
    """No legal order could be built; names the violated constraint."""


@dataclass(frozen=True)
class Verdict:
    name: str
    ok: bool
    detail: str = ""
    events: tuple[int, ...] = ()

    def __bool__(self) -> bool:
        return self.ok


# lattice agreement ---------------------------------------------------------

def check_la_properties(t: ExecutionTrace, fair: bool = True) -> dict[str, Verdict]:
    """Validity, Stability, Consistency and (for fair runs) Liveness."""
    out = {}
    proposals: list[AsoVector] = []
    last_learn: dict[int, tuple[AsoVector, int]] = {}
    learns: list[tuple[AsoVector, int]] = []
    op_value: dict[int, AsoVector] = {}
    validity = stability = None
    for e in t.events:
        for p in e.proposals:
            proposals.append(p.value)
            if p.op_id is not None:
                op_value[p.op_id] = p.value
        for node, w in e.learns:
            learns.append((w, e.id))
            if validity is None:
                below = [p for p in proposals if leq(p, w)]
                acc = below[0] if below else None
                for p in below[1:]:
                    acc = join(acc, p)
                if acc != w and not (acc is None and w.is_bottom()):
                    validity = Verdict("validity", False,
                                       f"node {node} learned a value that is not a join of proposals", (e.id,))
            prev = last_learn.get(node)
            if stability is None and prev is not None and not leq(prev[0], w):
                stability = Verdict("stability", False,
                                    f"node {node} learned a value not above its previous learn", (prev[1], e.id))
            last_learn[node] = (w, e.id)
        for r in e.replies:
            mine = op_value.get(r.op_id)
            if validity is None and r.witness is not None and mine is not None and not leq(mine, r.witness):
                validity = Verdict("validity", False,
                                   f"operation {r.op_id} returned a value without its own proposal", (e.id,))
    # Verdict is falsy when failed, so test for None rather than truthiness
    out["validity"] = Verdict("validity", True) if validity is None else validity
    out["stability"] = Verdict("stability", True) if stability is None else stability
    pair = first_incomparable([w for w, _ in learns])
    if pair is None:
        out["consistency"] = Verdict("consistency", True)
    else:
        a, b = learns[pair[0]][1], learns[pair[1]][1]
        out["consistency"] = Verdict("consistency", False, "incomparable learned values", (a, b))
    if fair:
        calls, replies = t.calls(), t.replies()
        missing = [(op.op_id, ev) for op_id, (op, ev) in sorted(calls.items())
                   if op_id not in replies and op.node not in t.crashed]
        if missing:
            out["liveness"] = Verdict("liveness", False,
                                      f"{len(missing)} operation(s) at correct nodes never returned",
                                      tuple(ev for _, ev in missing))
        else:
            out["liveness"] = Verdict("liveness", True)
    return out


# histories -----------------------------------------------------------------

@dataclass(frozen=True)
class OpRecord:
    op_id: int
    node: int
    kind: str  # "update" | "update_mw" | "snapshot"
    call: int
    ret: int | None = None
    result: Any = None
    # updates: (register, cell); absent for a multi-writer update still in its read phase
    cell: tuple[int, RegisterCell] | None = None
    # snapshots: the counter marker (node, r)
    counter: tuple[int, int] | None = None
    witness: AsoVector | None = None

    @property
    def complete(self) -> bool:
        return self.ret is not None

    @property
    def is_update(self) -> bool:
        return self.kind in UPDATE_KINDS

    @property
    def register(self) -> int | None:
        return self.cell[0] if self.cell else None

    @property
    def payload(self) -> Any:
        return self.cell[1].value if self.cell else None


def history_from_trace(t: ExecutionTrace) -> list[OpRecord]:
    """Snapshot-object operations of a trace, in call order."""
    last_prop: dict[int, AsoVector] = {}
    for e in t.events:
        for p in e.proposals:
            if p.op_id is not None:
                last_prop[p.op_id] = p.value
    replies = t.replies()
    out = []
    for op_id, (op, ev) in sorted(t.calls().items(), key=lambda kv: (kv[1][1], kv[0])):
        if op.kind not in UPDATE_KINDS and op.kind != "snapshot":
            continue
        rep = replies.get(op_id)
        ret, result, witness = (rep[1], rep[0].result, rep[0].witness) if rep else (None, None, None)
        cell = counter = None
        v = last_prop.get(op_id)
        if v is not None:
            if op.kind == "snapshot" or any(v.counters):
                pos = next((k for k, c in enumerate(v.counters) if c), None)
                if op.kind == "snapshot" and pos is not None:
                    counter = (pos, v.counters[pos])
            else:
                pos = next(k for k, c in enumerate(v.registers) if c.writes)
                cell = (pos, v.registers[pos])
        out.append(OpRecord(op_id, op.node, op.kind, ev, ret, result, cell, counter, witness))
    return out


@dataclass
class Linearization:
    order: list[OpRecord]
    witnesses: list[AsoVector | None]
    # complete updates whose exact cell no returned value shows
    unsuccessful: list[OpRecord] = field(default_factory=list)


def _real_time_ok(order: Sequence[OpRecord]) -> tuple[OpRecord, OpRecord] | None:
    for a_idx, a in enumerate(order):
        for b in order[:a_idx]:
            # b placed before a; violation if a returned before b was called
            if a.ret is not None and a.ret < b.call:
                return (a, b)
    return None


def _replay(order: Sequence[OpRecord], m: int, initial: Any) -> OpRecord | None:
    state = [initial] * m
    for op in order:
        if op.is_update:
            state[op.register] = op.payload
        elif tuple(op.result) != tuple(state):
            return op
    return None


def linearize_by_learned_order(history: Sequence[OpRecord], m: int | None = None,
                               initial: Any = "") -> Linearization:
    """Order operations by the learned values that witnessed them.

    Complete snapshots are keyed by their witness.  An update is keyed by
    the least witness (over complete operations) whose cell at its register
    is at least the update's cell; updates never reached by any witness are
    left out.  Within one key, updates come first, by cell, then snapshots
    by call event.  The result is checked by replay and real-time order.
    """
    complete = [op for op in history if op.complete]
    wits = [op.witness for op in complete]
    if any(w is None for w in wits):
        bad = next(op for op in complete if op.witness is None)
        raise LinearizationError(f"operation {bad.op_id} has no witness value")
    pair = first_incomparable(wits)
    if pair is not None:
        raise LinearizationError(
            f"witnesses of operations {complete[pair[0]].op_id} and {complete[pair[1]].op_id} are incomparable")
    if m is None:
        m = wits[0].m if wits else 0
    chain = sorted(set(wits), key=chain_key)
    rank = {w: k for k, w in enumerate(chain)}
    cells_proposed = {op.cell for op in history if op.cell is not None}

    for op in complete:
        w = op.witness
        if op.is_update and op.cell is not None and not leq_cell(op.cell[1], w.registers[op.cell[0]]):
            raise LinearizationError(f"update {op.op_id} returned a value without its own cell")
        if op.kind == "snapshot":
            if op.counter is not None and w.counters[op.counter[0]] < op.counter[1]:
                raise LinearizationError(f"snapshot {op.op_id} returned a value without its own marker")
            if tuple(op.result) != tuple(c.value for c in w.registers):
                raise LinearizationError(f"snapshot {op.op_id} result differs from its witness")
        for j, c in enumerate(w.registers):
            if c.writes and (j, c) not in cells_proposed:
                raise LinearizationError(
                    f"operation {op.op_id} saw cell {tuple(c)} at register {j} that no update wrote")

    keyed: list[tuple[tuple, OpRecord, AsoVector | None]] = []
    for op in history:
        if op.kind == "snapshot":
            if op.complete:
                keyed.append(((rank[op.witness], 1, op.call, op.op_id), op, op.witness))
            continue
        if op.cell is None:
            if op.complete:
                raise LinearizationError(f"complete update {op.op_id} has no written cell")
            continue
        j, c = op.cell
        k = next((r for r, w in enumerate(chain) if leq_cell(c, w.registers[j])), None)
        if k is None:
            if op.complete:
                raise LinearizationError(f"update {op.op_id} is not reflected in any witness")
            continue
        keyed.append(((k, 0, j, c.writes, c.value, op.op_id), op, chain[k]))
    keyed.sort(key=lambda x: (x[0][0], x[0][1], x[0][2:]))
    order = [op for _, op, _ in keyed]
    shown = {(j, c) for w in chain for j, c in enumerate(w.registers)}
    unsuccessful = [op for op in order if op.is_update and op.complete and op.cell not in shown]

    bad = _replay(order, m, initial)
    if bad is not None:
        raise LinearizationError(f"snapshot {bad.op_id} is not legal in the learned order")
    rt = _real_time_ok(order)
    if rt is not None:
        raise LinearizationError(f"operation {rt[1].op_id} is ordered before {rt[0].op_id}, "
                                 f"which completed before it started")
    return Linearization(order, [w for _, _, w in keyed], unsuccessful)


def leq_cell(a: RegisterCell, b: RegisterCell) -> bool:
    return (a.writes, a.value) <= (b.writes, b.value)


def brute_force_linearizable(history: Sequence[OpRecord], m: int | None = None, initial: Any = "",
                             limit: int = BRUTE_FORCE_LIMIT) -> bool:
    """Exhaustive search for a legal order respecting real time.

    Complete operations must all appear; incomplete updates may appear or
    not; incomplete snapshots are ignored.
    """
    required = [op for op in history if op.complete]
    optional = [op for op in history if not op.complete and op.is_update and op.cell is not None]
    if len(required) > limit:
        raise ValueError(f"history has {len(required)} complete operations, limit is {limit}")
    if m is None:
        regs = [op.register for op in history if op.is_update and op.register is not None]
        lens = [len(op.result) for op in required if op.kind == "snapshot"]
        m = max(lens + [r + 1 for r in regs] + [1])
    ops = required + optional
    nreq = len(required)
    # preds[i]: ops that must come before op i
    preds = [frozenset(k for k, b in enumerate(ops) if b.ret is not None and b.ret < a.call)
             for a in ops]
    seen: set[tuple[int, tuple]] = set()

    def dfs(placed: int, state: tuple) -> bool:
        if all(placed >> k & 1 for k in range(nreq)):
            return True
        key = (placed, state)
        if key in seen:
            return False
        seen.add(key)
        for k, op in enumerate(ops):
            if placed >> k & 1:
                continue
            if any(not placed >> p & 1 for p in preds[k]):
                continue
            if op.is_update:
                nxt = state[:op.register] + (op.payload,) + state[op.register + 1:]
                if dfs(placed | 1 << k, nxt):
                    return True
            elif tuple(op.result) == state and dfs(placed | 1 << k, state):
                return True
        return False

    return dfs(0, (initial,) * m)
