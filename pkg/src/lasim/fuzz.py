"""Random corpora: abstract covered traces and randomized protocol runs."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Iterator

from lasim.metrics import find_holes
from lasim.scenarios import LatencyReport, ScenarioSpec, run_scenario
from lasim.sim import Crash
from lasim.trace import Event, ExecutionTrace, MessageRecord, Msg, validate_trace


def random_trace(rng: random.Random, max_n: int = 5, max_events: int = 40,
                 multi_node: float = 0.05) -> ExecutionTrace:
    """A random execution obeying the model: FIFO channels, unique ids, no fabricated receipts."""
    n = rng.randint(2, max_n)
    length = rng.randint(2, max_events)
    t = ExecutionTrace(n=n, f=0, protocol="random")
    channels: dict[tuple[int, int], deque[int]] = {}
    seqs: dict[tuple[int, int], int] = {}
    for eid in range(length):
        busy = [ch for ch, q in channels.items() if q]
        nodes: list[int] = []
        receives: list[int] = []
        if busy and rng.random() < 0.8:
            ch = rng.choice(sorted(busy))
            receives.append(channels[ch].popleft())
            nodes.append(ch[1])
            if rng.random() < multi_node:
                others = sorted(c for c in busy if c[1] != ch[1] and channels[c])
                if others:
                    ch2 = rng.choice(others)
                    receives.append(channels[ch2].popleft())
                    nodes.append(ch2[1])
        else:
            nodes.append(rng.randrange(n))
        sends = []
        in_flight = sum(len(q) for q in channels.values())
        if in_flight == 0 or rng.random() < 0.6:
            src = nodes[0]
            for dst in rng.sample([d for d in range(n) if d != src], rng.randint(1, min(2, n - 1))):
                mid = len(t.messages)
                ch = (src, dst)
                seq = seqs.get(ch, 0)
                seqs[ch] = seq + 1
                t.messages[mid] = MessageRecord(mid, src, dst, seq, Msg("M"), eid)
                channels.setdefault(ch, deque()).append(mid)
                sends.append(mid)
        for mid in receives:
            t.messages[mid].delivered_at = eid
        t.events.append(Event(eid, "deliver" if receives else "call", tuple(sorted(nodes)),
                              tuple(receives), tuple(sends)))
    validate_trace(t)
    return t


def covered_traces(count: int, seed: int = 0, max_n: int = 5, max_events: int = 40) -> Iterator[ExecutionTrace]:
    """Yield ``count`` covered random traces (rejection sampling)."""
    rng = random.Random(seed)
    made = 0
    while made < count:
        t = random_trace(rng, max_n, max_events)
        if not find_holes(t):
            made += 1
            yield t


# single-writer and multi-writer updates are separate objects; a run uses one
OP_MODES = (("update", "snapshot"), ("update_mw", "snapshot"))
RUN_KINDS = ("fair", "burst", "oldest", "lazy", "crash", "active-faulty", "faleiro", "garg")


def random_spec(rng: random.Random, idx: int, max_n: int = 5, max_ops: int = 6) -> ScenarioSpec:
    """A randomized scenario; the kind cycles so every variant is represented."""
    kind = RUN_KINDS[idx % len(RUN_KINDS)]
    seed = rng.randrange(1 << 30)
    if kind in ("faleiro", "garg"):
        n = rng.randint(1, max_n)
        f = rng.randint(0, (n - 1) // 2)
        crashes = _random_crashes(rng, n, f, ("PROPOSAL", "VALUE"))
        return ScenarioSpec(name=f"fuzz-{idx}-{kind}", protocol=kind, n=n, f=f, seed=seed,
                            schedule="fair", crashes=crashes)
    n = rng.randint(3 if kind == "active-faulty" else 2, max_n)
    f = rng.randint(1 if kind == "active-faulty" else 0, (n - 1) // 2)
    mode = OP_MODES[rng.randrange(2)] if kind != "active-faulty" else OP_MODES[0]
    ops = []
    for j in range(rng.randint(1, max_ops)):
        node = rng.randrange(n - f if kind == "active-faulty" else n)
        op = rng.choice(mode)
        if op == "update":
            ops.append((node, op, (f"p{idx}.{j}",)))
        elif op == "update_mw":
            ops.append((node, op, (rng.randrange(n), f"q{idx}.{j}")))
        else:
            ops.append((node, op, ()))
    if kind == "active-faulty":
        ops[0] = (0, "update", (f"p{idx}.0",))
        return ScenarioSpec(name=f"fuzz-{idx}-{kind}", n=n, f=f, ops=tuple(ops), seed=seed,
                            schedule="active-faulty", k=rng.randint(1, f), target=0)
    crashes = _random_crashes(rng, n, f, ("REQUEST", "PROPOSE", "ACCEPT")) if kind == "crash" else ()
    schedule = {"burst": "burst", "oldest": "oldest"}.get(kind, "fair")
    return ScenarioSpec(name=f"fuzz-{idx}-{kind}", n=n, f=f, ops=tuple(ops), seed=seed,
                        schedule=schedule, lazy=kind == "lazy", crashes=crashes)


def _random_crashes(rng: random.Random, n: int, f: int, kinds: tuple[str, ...]) -> tuple[Crash, ...]:
    if f == 0:
        return ()
    victims = rng.sample(range(n), rng.randint(1, f))
    out = []
    for v in victims:
        if rng.random() < 0.5:
            out.append(Crash(v, at_step=rng.randint(0, 30)))
        else:
            out.append(Crash(v, after_sends=(rng.choice(kinds), rng.randint(1, 2 * n)),
                             keep_in_flight=rng.random() < 0.5))
    return tuple(out)


@dataclass
class CorpusRun:
    spec: ScenarioSpec
    report: LatencyReport

    @property
    def trace(self) -> ExecutionTrace:
        return self.report.trace


def protocol_corpus(count: int, seed: int = 0, max_n: int = 5, max_ops: int = 6) -> Iterator[CorpusRun]:
    rng = random.Random(seed)
    for idx in range(count):
        spec = random_spec(rng, idx, max_n, max_ops)
        yield CorpusRun(spec, run_scenario(spec))
