"""Execution traces: events, message table, JSON-lines persistence.

A trace file is one JSON header line followed by one line per event.  Every
line is written with sorted keys and fixed separators, so identical runs give
identical bytes.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, TextIO

from lasim.lattice import AsoVector

TRACE_FORMAT = "lasim-trace"
TRACE_VERSION = 1


class TraceError(ValueError):
    """A trace violates the execution model or is malformed."""


@dataclass(frozen=True)
class Msg:
    kind: str
    value: Any = None
    tag: int | None = None


@dataclass(frozen=True)
class Operation:
    op_id: int
    node: int
    kind: str
    args: tuple = ()


@dataclass(frozen=True)
class Reply:
    op_id: int
    node: int
    result: Any = None
    witness: AsoVector | None = None


@dataclass(frozen=True)
class Proposal:
    """A value handed to the agreement layer on behalf of an operation."""
    node: int
    op_id: int | None
    value: AsoVector


@dataclass
class Effects:
    sends: list[tuple[int, Msg]] = field(default_factory=list)
    replies: list[Reply] = field(default_factory=list)
    proposals: list[Proposal] = field(default_factory=list)
    learns: list[AsoVector] = field(default_factory=list)

    def extend(self, other: Effects) -> None:
        self.sends.extend(other.sends)
        self.replies.extend(other.replies)
        self.proposals.extend(other.proposals)
        self.learns.extend(other.learns)


@dataclass
class MessageRecord:
    id: int
    src: int
    dst: int
    seq: int
    msg: Msg
    sent_at: int
    delivered_at: int | None = None


@dataclass(frozen=True)
class Event:
    id: int
    kind: str
    nodes: tuple[int, ...]
    receives: tuple[int, ...] = ()
    sends: tuple[int, ...] = ()
    calls: tuple[Operation, ...] = ()
    replies: tuple[Reply, ...] = ()
    proposals: tuple[Proposal, ...] = ()
    learns: tuple[tuple[int, AsoVector], ...] = ()


@dataclass
class ExecutionTrace:
    n: int
    f: int
    seed: int | None = None
    protocol: str = ""
    events: list[Event] = field(default_factory=list)
    messages: dict[int, MessageRecord] = field(default_factory=dict)
    # node -> index of the first event after the crash
    crashed: dict[int, int] = field(default_factory=dict)
    outcome: str = ""

    def __len__(self) -> int:
        return len(self.events)

    def sources(self, i: int) -> tuple[int, ...]:
        """Indices of the events that sent the messages received by event ``i``."""
        return tuple(self.messages[m].sent_at for m in self.events[i].receives)

    def all_sources(self) -> list[tuple[int, ...]]:
        return [self.sources(i) for i in range(len(self.events))]

    def hops(self) -> list[tuple[int, int]]:
        """Distinct (sending event, receiving event) pairs, sorted."""
        out = {(m.sent_at, m.delivered_at) for m in self.messages.values() if m.delivered_at is not None}
        return sorted(out)

    def calls(self) -> dict[int, tuple[Operation, int]]:
        return {op.op_id: (op, e.id) for e in self.events for op in e.calls}

    def replies(self) -> dict[int, tuple[Reply, int]]:
        return {r.op_id: (r, e.id) for e in self.events for r in e.replies}


# value encoding -----------------------------------------------------------

def encode_value(v: Any) -> Any:
    if isinstance(v, AsoVector):
        return {"aso": v.to_json()}
    if isinstance(v, (list, tuple)):
        return [encode_value(x) for x in v]
    if v is None or isinstance(v, (str, int, float, bool)):
        return v
    raise TraceError(f"cannot encode value of type {type(v).__name__}")


def decode_value(v: Any) -> Any:
    if isinstance(v, dict):
        if "aso" in v:
            return AsoVector.from_json(v["aso"])
        raise TraceError(f"unknown encoded value {v!r}")
    if isinstance(v, list):
        return tuple(decode_value(x) for x in v)
    return v


def _digest(v: Any) -> str:
    if isinstance(v, AsoVector):
        return v.digest()
    return ""


def _event_record(t: ExecutionTrace, e: Event) -> dict:
    sends = []
    for mid in e.sends:
        m = t.messages[mid]
        sends.append({
            "id": m.id, "src": m.src, "dst": m.dst, "seq": m.seq,
            "kind": m.msg.kind, "tag": m.msg.tag,
            "value": encode_value(m.msg.value), "digest": _digest(m.msg.value),
        })
    return {
        "id": e.id,
        "kind": e.kind,
        "nodes": list(e.nodes),
        "receives": list(e.receives),
        "sends": sends,
        "calls": [{"op": o.op_id, "node": o.node, "kind": o.kind, "args": encode_value(o.args)} for o in e.calls],
        "replies": [{"op": r.op_id, "node": r.node, "result": encode_value(r.result),
                     "witness": encode_value(r.witness)} for r in e.replies],
        "proposals": [{"node": p.node, "op": p.op_id, "value": encode_value(p.value)} for p in e.proposals],
        "learns": [{"node": nd, "value": encode_value(v)} for nd, v in e.learns],
    }


def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def export_trace(t: ExecutionTrace, sink: str | Path | TextIO) -> None:
    header = {
        "format": TRACE_FORMAT, "version": TRACE_VERSION,
        "n": t.n, "f": t.f, "seed": t.seed, "protocol": t.protocol,
        "outcome": t.outcome, "crashed": {str(k): v for k, v in sorted(t.crashed.items())},
    }
    lines = [_dump(header)] + [_dump(_event_record(t, e)) for e in t.events]
    text = "\n".join(lines) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text, encoding="utf-8")
    else:
        sink.write(text)


def trace_bytes(t: ExecutionTrace) -> bytes:
    buf = io.StringIO()
    export_trace(t, buf)
    return buf.getvalue().encode("utf-8")


def import_trace(source: str | Path | TextIO | Iterable[str]) -> ExecutionTrace:
    if isinstance(source, (str, Path)):
        lines = Path(source).read_text(encoding="utf-8").splitlines()
    else:
        lines = list(source)
    lines = [ln for ln in (x.strip() for x in lines) if ln]
    if not lines:
        raise TraceError("empty trace")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise TraceError(f"malformed record: {exc}") from None
    if header.get("format") != TRACE_FORMAT or header.get("version") != TRACE_VERSION:
        raise TraceError(f"not a {TRACE_FORMAT} v{TRACE_VERSION} header: {header!r}")
    try:
        t = ExecutionTrace(
            n=int(header["n"]), f=int(header["f"]), seed=header.get("seed"),
            protocol=header.get("protocol", ""), outcome=header.get("outcome", ""),
            crashed={int(k): int(v) for k, v in header.get("crashed", {}).items()},
        )
        for rec in records:
            _import_event(t, rec)
    except (KeyError, TypeError) as exc:
        raise TraceError(f"malformed record: missing or bad field {exc}") from None
    validate_trace(t)
    return t


def _import_event(t: ExecutionTrace, rec: dict) -> None:
    eid = int(rec["id"])
    if eid != len(t.events):
        raise TraceError(f"event id {eid} out of sequence (expected {len(t.events)})")
    sends = []
    for s in rec.get("sends", []):
        mid = int(s["id"])
        if mid in t.messages:
            raise TraceError(f"duplicate message id {mid}")
        t.messages[mid] = MessageRecord(
            id=mid, src=int(s["src"]), dst=int(s["dst"]), seq=int(s["seq"]),
            msg=Msg(s["kind"], decode_value(s.get("value")), s.get("tag")), sent_at=eid,
        )
        sends.append(mid)
    receives = tuple(int(m) for m in rec.get("receives", []))
    for mid in receives:
        if mid not in t.messages:
            raise TraceError(f"event {eid} receives unknown message id {mid}")
        m = t.messages[mid]
        if m.delivered_at is not None:
            raise TraceError(f"message {mid} received twice")
        m.delivered_at = eid
    t.events.append(Event(
        id=eid,
        kind=rec.get("kind", ""),
        nodes=tuple(int(x) for x in rec["nodes"]),
        receives=receives,
        sends=tuple(sends),
        calls=tuple(Operation(c["op"], c["node"], c["kind"], decode_value(c.get("args", [])))
                    for c in rec.get("calls", [])),
        replies=tuple(Reply(r["op"], r["node"], decode_value(r.get("result")), decode_value(r.get("witness")))
                      for r in rec.get("replies", [])),
        proposals=tuple(Proposal(p["node"], p.get("op"), decode_value(p["value"]))
                        for p in rec.get("proposals", [])),
        learns=tuple((int(x["node"]), decode_value(x["value"])) for x in rec.get("learns", [])),
    ))


def validate_trace(t: ExecutionTrace) -> None:
    """Check the execution-model rules; raise :class:`TraceError` on the first violation."""
    buffer: set[int] = set()
    next_send_seq: dict[tuple[int, int], int] = {}
    next_recv_seq: dict[tuple[int, int], int] = {}
    seen: set[int] = set()
    for i, e in enumerate(t.events):
        if e.id != i:
            raise TraceError(f"event at position {i} has id {e.id}")
        if not e.nodes:
            raise TraceError(f"event {i} has no participating node")
        for nd in e.nodes:
            if not 0 <= nd < t.n:
                raise TraceError(f"event {i}: node {nd} out of range")
            if nd in t.crashed and i >= t.crashed[nd]:
                raise TraceError(f"event {i}: node {nd} takes a step after crashing")
        for mid in e.receives:
            if mid not in buffer:
                raise TraceError(f"event {i} receives message {mid} not in the buffer")
            m = t.messages[mid]
            if m.dst not in e.nodes:
                raise TraceError(f"event {i} receives message {mid} addressed to node {m.dst}")
            ch = (m.src, m.dst)
            want = next_recv_seq.get(ch, 0)
            if m.seq != want:
                raise TraceError(f"FIFO violation on channel {m.src}->{m.dst}: delivered seq {m.seq}, expected {want}")
            next_recv_seq[ch] = want + 1
            buffer.discard(mid)
        for mid in e.sends:
            if mid in seen:
                raise TraceError(f"message id {mid} is not unique")
            seen.add(mid)
            m = t.messages[mid]
            if m.src not in e.nodes:
                raise TraceError(f"event {i} sends message {mid} from non-participant {m.src}")
            if not 0 <= m.dst < t.n:
                raise TraceError(f"message {mid} addressed to unknown node {m.dst}")
            ch = (m.src, m.dst)
            want = next_send_seq.get(ch, 0)
            if m.seq != want:
                raise TraceError(f"channel {m.src}->{m.dst}: sent seq {m.seq}, expected {want}")
            next_send_seq[ch] = want + 1
            buffer.add(mid)
