"""Scenario library: workloads, schedules, expected bounds and latency reports."""

from __future__ import annotations

import json
import operator
import re
import statistics
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable

from lasim.adversary import ActiveFaultyDelay, GargHalfSplit
from lasim.aso import AsoNode
from lasim.baselines import BroadcastNode, FaleiroNode, GargNode, initial_value
from lasim.checkers import (
    BRUTE_FORCE_LIMIT, LinearizationError, brute_force_linearizable, check_la_properties,
    history_from_trace, linearize_by_learned_order,
)
from lasim.lattice import LatticeConfig
from lasim.metrics import (
    CoveredRequired, assign_ira, assign_ntr, latency_between, lcc_count, min_hop_cover,
    min_hop_cover_between, round_table,
)
from lasim.sim import ContentionBurst, Crash, Fair, FaultPlan, OldestFirst, Scripted, Simulation, Workload
from lasim.trace import ExecutionTrace

PROTOCOLS = {"main": AsoNode, "faleiro": FaleiroNode, "garg": GargNode, "broadcast": BroadcastNode}
SCHEDULES = ("fair", "burst", "oldest", "scripted", "active-faulty", "garg-half-split")
COLUMNS = ("no_contention", "contention", "bad_case", "amortized")
CLAIMS = {
    "main": {"no_contention": "2", "contention": "8", "bad_case": "8+2k", "amortized": "8"},
    "faleiro": {"no_contention": "6"},
    "garg": {"no_contention": "2", "bad_case": ">=f/2"},
}
COMPARATORS: dict[str, Callable[[Any, Any], bool]] = {
    "<=": operator.le, "<": operator.lt, ">=": operator.ge, ">": operator.gt, "==": operator.eq,
}


class ScenarioError(ValueError):
    """Unknown scenario or malformed scenario description."""


class ConfigError(ScenarioError):
    """Malformed config file or invalid scenario parameters."""


@dataclass(frozen=True)
class Bound:
    metric: str
    cmp: str
    value: float
    anchor: str = ""

    def __post_init__(self):
        if self.cmp not in COMPARATORS:
            raise ConfigError(f"unknown comparator {self.cmp!r}")

    def holds(self, measured) -> bool:
        return measured is not None and COMPARATORS[self.cmp](measured, self.value)

    def __str__(self) -> str:
        return f"{self.metric} {self.cmp} {self.value:g}"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    protocol: str = "main"
    n: int = 3
    f: int = 1
    ops: tuple[tuple[int, str, tuple], ...] = ()
    schedule: str = "fair"
    k: int = 0
    target: int = 0
    script: tuple[tuple, ...] = ()
    crashes: tuple[Crash, ...] = ()
    lazy: bool = False
    bounds: tuple[Bound, ...] = ()
    seed: int = 0
    budget: int | None = None
    column: str = ""
    description: str = ""

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.n < 1 or self.f < 0 or 2 * self.f >= self.n:
            raise ConfigError(f"need n >= 1 and 0 <= f < n/2, got n={self.n} f={self.f}")

    @property
    def one_shot(self) -> bool:
        return self.protocol in ("faleiro", "garg")


@dataclass
class OpLatency:
    op_id: int
    node: int
    kind: str
    call: int
    ret: int | None
    rounds: int | None
    hop_cover: int | None
    active_faulty: int


@dataclass
class LatencyReport:
    name: str
    protocol: str
    n: int
    f: int
    seed: int
    outcome: str
    events: int
    ops: list[OpLatency]
    max_latency: int | None
    mean_latency: float | None
    metrics: dict[str, Any]
    verdicts: dict[str, bool]
    violations: list[str]
    column: str = ""
    trace: ExecutionTrace | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def liveness_failure(self) -> bool:
        return self.outcome in ("budget", "deadlock")

    def to_json(self) -> dict:
        d = asdict(replace(self, trace=None))
        d.pop("trace")
        d["ok"] = self.ok
        return d


# scenario library ---------------------------------------------------------

def _single(kind: str) -> tuple:
    return ((0, kind, ("a",) if kind == "update" else ()),)


def _back_to_back(nodes: range | list[int], per_node: int) -> tuple:
    ops = []
    for i in range(per_node):
        for node in nodes:
            if (node + i) % 2 == 0:
                ops.append((node, "update", (f"v{node}.{i}",)))
            else:
                ops.append((node, "snapshot", ()))
    return tuple(ops)


def good_case_no_contention(n=None, f=None, k=None, seed=0, op="update") -> ScenarioSpec:
    n = n or 3
    return ScenarioSpec(
        name=f"good-case-no-contention{'-snapshot' if op == 'snapshot' else ''}",
        n=n, f=(n - 1) // 2 if f is None else f, ops=_single(op), seed=seed,
        bounds=(Bound("max_latency", "<=", 2, "fault-free request without contention completes in at most 2 rounds"),),
        column="no_contention", description=f"one {op} at node 0, fault-free fair schedule",
    )


def good_case_contention(n=None, f=None, k=None, seed=0, per_node=20) -> ScenarioSpec:
    n = n or 4
    return ScenarioSpec(
        name="good-case-contention", n=n, f=(n - 1) // 2 if f is None else f,
        ops=_back_to_back(range(n), per_node), schedule="oldest", seed=seed,
        bounds=(Bound("max_latency", "<=", 8, "fault-free operation under contention takes at most 8 rounds"),),
        column="contention", description=f"every node issues {per_node} back-to-back operations",
    )


def active_faulty(n=None, f=None, k=None, seed=0) -> ScenarioSpec:
    n, f = n or 7, 3 if f is None else f
    k = 2 if k is None else k
    faulty = tuple(range(n - f, n))
    ops = ((0, "update", ("a",)),)
    return ScenarioSpec(
        name="active-faulty", n=n, f=f, k=k, ops=ops, schedule="active-faulty", target=0, seed=seed,
        bounds=(
            Bound("target_latency", "<=", 8 + 2 * k, "delayed operation takes less than 8+2k+1 rounds"),
            Bound("active_allowance_excess", "<=", 0, "every operation within 8 + 2 * active faulty"),
        ),
        column="bad_case", description=f"{k} faulty introducers among nodes {list(faulty)} delay node 0's update",
    )


def amortized(n=None, f=None, k=None, seed=0, total=200) -> ScenarioSpec:
    n, f = n or 5, 2 if f is None else f
    correct = list(range(n - f))
    per = -(-total // len(correct))
    ops = [o for o in _back_to_back(correct, per)][:total]
    # the crash-prone nodes also issue work until they crash
    ops += [o for o in _back_to_back(range(n - f, n), per)]
    crashes = tuple(Crash(node, after_sends=("PROPOSE", 8 * (idx + 1)), keep_in_flight=True)
                    for idx, node in enumerate(range(n - f, n)))
    return ScenarioSpec(
        name="amortized", n=n, f=f, ops=tuple(ops), schedule="oldest", crashes=crashes, seed=seed,
        bounds=(Bound("mean_latency", "<=", 8.1, "amortized time complexity of 8 rounds"),),
        column="amortized", description=f"{total} operations at correct nodes, {f} crashes mid-broadcast",
    )


def faleiro_good_case(n=None, f=None, k=None, seed=0) -> ScenarioSpec:
    n = n or 3
    return ScenarioSpec(
        name="faleiro-good-case", protocol="faleiro", n=n, f=(n - 1) // 2 if f is None else f, seed=seed,
        bounds=(Bound("max_latency", "<=", 6, "one-shot proposer/acceptor takes at most 6 rounds"),),
        column="no_contention", description="one-shot, all nodes propose at the start event",
    )


def garg_good_case(n=None, f=None, k=None, seed=0) -> ScenarioSpec:
    n = n or 3
    return ScenarioSpec(
        name="garg-good-case", protocol="garg", n=n, f=(n - 1) // 2 if f is None else f, seed=seed,
        bounds=(Bound("max_latency", "<=", 2, "one-shot view-array takes at most 2 rounds"),),
        column="no_contention", description="one-shot, all nodes propose at the start event",
    )


def garg_bad_case(n=None, f=None, k=None, seed=0) -> ScenarioSpec:
    f = 4 if f is None else f
    return ScenarioSpec(
        name="garg-bad-case", protocol="garg", n=2 * f + 1, f=f, schedule="garg-half-split", seed=seed,
        bounds=(Bound("min_latency", ">=", f / 2, "view-array bad case takes at least f/2 rounds"),),
        column="bad_case", description="faulty halves feed one value per round to a shrinking group",
    )


RELAY_CHAIN = (("call", 0, "broadcast", ("m",)), ("deliver", 0, 1), ("deliver", 0, 2), ("deliver", 1, 3))
FANOUT = (("call", 0, "broadcast", ("m",)), ("deliver", 0, 1), ("deliver", 1, 2),
            ("deliver", 0, 2), ("deliver", 0, 3))
LATE_WINDOW = (("call", 0, "broadcast", ("m",)), ("call", 2, "broadcast", ("q",)),
            ("deliver", 0, 1), ("deliver", 1, 3))


def scripted_fixture(script, name, bounds) -> Callable[..., ScenarioSpec]:
    def make(n=None, f=None, k=None, seed=0) -> ScenarioSpec:
        return ScenarioSpec(name=name, protocol="broadcast", n=4, f=0, schedule="scripted",
                            script=script, seed=seed, bounds=bounds,
                            description="scripted reliable-broadcast fixture")
    return make


LIBRARY: dict[str, Callable[..., ScenarioSpec]] = {
    "good-case-no-contention": good_case_no_contention,
    "good-case-no-contention-snapshot": lambda **kw: good_case_no_contention(op="snapshot", **kw),
    "good-case-contention": good_case_contention,
    "active-faulty": active_faulty,
    "amortized": amortized,
    "faleiro-good-case": faleiro_good_case,
    "garg-good-case": garg_good_case,
    "garg-bad-case": garg_bad_case,
    "relay-chain": scripted_fixture(RELAY_CHAIN, "relay-chain", (Bound("ntr", "==", 2), Bound("ira", "==", 2),
                                              Bound("lcc", "==", 2), Bound("hop_cover", "==", 2))),
    "broadcast-fanout": scripted_fixture(FANOUT, "broadcast-fanout", (Bound("ntr", "==", 1), Bound("lcc", "==", 2))),
    "late-window": scripted_fixture(LATE_WINDOW, "late-window", (Bound("ntr", "==", 2),)),
}


def get_scenario(name: str, n=None, f=None, k=None, seed: int = 0) -> ScenarioSpec:
    try:
        factory = LIBRARY[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; try one of: {', '.join(sorted(LIBRARY))}") from None
    return factory(n=n, f=f, k=k, seed=seed)


# running -------------------------------------------------------------------

def build_nodes(protocol: str, n: int, f: int, lazy: bool = False) -> list:
    cls = PROTOCOLS[protocol]
    nodes = [cls(i, n, f) for i in range(n)]
    if lazy:
        for nd in nodes:
            nd.lazy = True
    return nodes


def make_schedule(spec: ScenarioSpec):
    if spec.schedule == "fair":
        return Fair(spec.seed)
    if spec.schedule == "burst":
        return ContentionBurst(spec.seed)
    if spec.schedule == "oldest":
        return OldestFirst(spec.seed)
    if spec.schedule == "scripted":
        return Scripted(spec.script)
    if spec.schedule == "active-faulty":
        return ActiveFaultyDelay(spec.k, tuple(range(spec.n - spec.f, spec.n)), spec.target, spec.seed)
    if spec.schedule == "garg-half-split":
        return GargHalfSplit(spec.f, spec.seed)
    raise ScenarioError(f"unknown schedule {spec.schedule!r}")


def simulate(spec: ScenarioSpec) -> ExecutionTrace:
    nodes = build_nodes(spec.protocol, spec.n, spec.f, spec.lazy)
    if spec.one_shot:
        cfg = LatticeConfig.square(spec.n)
        workload = Workload(start=True, initial=tuple(initial_value(cfg, i) for i in range(spec.n)))
    else:
        workload = Workload(ops=spec.ops)
    sim = Simulation(nodes, spec.f, workload, FaultPlan(spec.crashes), spec.seed, spec.protocol, spec.budget)
    return sim.run(make_schedule(spec))


def active_faulty_count(t: ExecutionTrace, call: int, ret: int) -> int:
    """Distinct crashed nodes whose messages are received strictly after ``call`` up to ``ret``."""
    faulty = set(t.crashed)
    seen = set()
    for e in t.events[call + 1:ret + 1]:
        for mid in e.receives:
            src = t.messages[mid].src
            if src in faulty:
                seen.add(src)
    return len(seen)


def operation_latencies(t: ExecutionTrace) -> list[OpLatency]:
    replies = t.replies()
    out = []
    for op_id, (op, call) in sorted(t.calls().items()):
        rep = replies.get(op_id)
        ret = rep[1] if rep else None
        rounds = cover = None
        k_act = 0
        if ret is not None:
            try:
                rounds = latency_between(t, call, ret)
                cover = min_hop_cover_between(t, call, ret).k
            except CoveredRequired:
                pass
            k_act = active_faulty_count(t, call, ret)
        out.append(OpLatency(op_id, op.node, op.kind, call, ret, rounds, cover, k_act))
    return out


def _trace_metrics(t: ExecutionTrace) -> dict[str, Any]:
    m: dict[str, Any] = {"ira": assign_ira(t).count if t.events else 0, "lcc": lcc_count(t)}
    try:
        m["ntr"] = assign_ntr(t).count
        m["hop_cover"] = min_hop_cover(t).k
    except CoveredRequired as exc:
        m["ntr"] = m["hop_cover"] = None
        m["hole"] = list(exc.hole)
    return m


def run_scenario(spec: ScenarioSpec, check: bool = True) -> LatencyReport:
    t = simulate(spec)
    ops = operation_latencies(t)
    correct_ops = [o for o in ops if o.node not in t.crashed and o.ret is not None]
    lat = [o.rounds for o in correct_ops if o.rounds is not None]
    metrics = _trace_metrics(t)
    metrics["max_latency"] = max(lat) if lat else None
    metrics["mean_latency"] = statistics.fmean(lat) if lat else None
    metrics["min_latency"] = min(lat) if lat else None
    tgt = next((o for o in ops if o.op_id == spec.target), None)
    metrics["target_latency"] = tgt.rounds if tgt else None
    metrics["active_allowance_excess"] = max(
        (o.rounds - (8 + 2 * o.active_faulty) for o in correct_ops if o.rounds is not None), default=None)
    metrics["completed"] = len(correct_ops)

    violations: list[str] = []
    verdicts: dict[str, bool] = {}
    if t.outcome in ("budget", "deadlock"):
        violations.append(f"liveness: run ended with outcome {t.outcome!r}")
    uncovered = [o.op_id for o in correct_ops if o.rounds is None]
    metrics["uncovered_ops"] = uncovered
    # lazy guard ticks are internal steps, so a lazy run may leave cuts uncrossed
    if uncovered and spec.protocol != "broadcast" and not spec.lazy:
        violations.append(f"latency undefined (hole) for operations {uncovered}")
    if check and spec.protocol != "broadcast":
        # liveness is owed to correct nodes even when up to f others crash
        fair = spec.schedule in ("fair", "burst", "oldest")
        for name, v in check_la_properties(t, fair=fair).items():
            verdicts[name] = v.ok
            if not v.ok:
                violations.append(f"{name}: {v.detail} at events {list(v.events)}")
        if spec.protocol == "main":
            hist = history_from_trace(t)
            try:
                linearize_by_learned_order(hist, spec.n)
                verdicts["linearizable"] = True
            except LinearizationError as exc:
                verdicts["linearizable"] = False
                violations.append(f"linearizability: {exc}")
            if sum(1 for h in hist if h.complete) <= BRUTE_FORCE_LIMIT:
                ok = brute_force_linearizable(hist, spec.n)
                verdicts["brute_force_linearizable"] = ok
                if not ok:
                    violations.append("linearizability: brute-force search found no legal order")
    for b in spec.bounds:
        got = metrics.get(b.metric)
        if not b.holds(got):
            violations.append(f"bound {b} violated: measured {got}" + (f" ({b.anchor})" if b.anchor else ""))
    return LatencyReport(
        name=spec.name, protocol=spec.protocol, n=spec.n, f=spec.f, seed=spec.seed, outcome=t.outcome,
        events=len(t.events), ops=ops, max_latency=metrics["max_latency"],
        mean_latency=metrics["mean_latency"], metrics=metrics, verdicts=verdicts,
        violations=violations, column=spec.column, trace=t,
    )


# tables --------------------------------------------------------------------

def _cell(reports: list[LatencyReport]) -> str:
    if not reports:
        return ""
    col = reports[0].column
    vals = [r.metrics.get("min_latency") if col == "bad_case" and r.protocol == "garg"
            else r.metrics.get("mean_latency") if col == "amortized"
            else r.metrics.get("target_latency") if col == "bad_case"
            else r.max_latency for r in reports]
    vals = [v for v in vals if v is not None]
    if not vals:
        return "n/a"
    v = max(vals)
    return f"{v:.2f}" if isinstance(v, float) and not v.is_integer() else f"{int(v)}"


def emit_table(reports: list[LatencyReport]) -> str:
    """Rows are protocols, columns are latency regimes; cells read 'measured (claimed)'."""
    if not reports:
        raise ScenarioError("no reports to tabulate")
    header = ["protocol", "good-case w/o contention", "good-case w/ contention", "bad-case", "amortized"]
    rows = [header]
    for proto in sorted({r.protocol for r in reports if r.protocol in CLAIMS}):
        row = [proto]
        for col in COLUMNS:
            rs = [r for r in reports if r.protocol == proto and r.column == col]
            claim = CLAIMS[proto].get(col)
            cell = _cell(rs)
            row.append(f"{cell} ({claim})" if cell and claim else cell or "-")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)


# config files ----------------------------------------------------------------

_CRASH = re.compile(r"^(\d+)\s+(?:at\s+(\d+)|after\s+(\w+)\s+(\d+))(\s+keep)?$")


def _parse_ops(text: str) -> tuple:
    ops = []
    for item in filter(None, (x.strip() for x in text.split(";"))):
        parts = [p.strip() for p in item.split(":")]
        if len(parts) < 2 or not parts[0].isdigit():
            raise ConfigError(f"bad operation {item!r}; expected node:kind[:args]")
        node, kind, args = int(parts[0]), parts[1], tuple(parts[2:])
        if kind == "update_mw":
            if len(args) != 2:
                raise ConfigError(f"update_mw needs register and payload: {item!r}")
            args = (int(args[0]), args[1])
        elif kind == "update" and len(args) != 1:
            raise ConfigError(f"update needs one payload: {item!r}")
        elif kind == "snapshot" and args:
            raise ConfigError(f"snapshot takes no arguments: {item!r}")
        elif kind not in ("update", "snapshot", "update_mw", "broadcast"):
            raise ConfigError(f"unknown operation kind {kind!r}")
        ops.append((node, kind, args))
    return tuple(ops)


def _parse_script(text: str) -> tuple:
    out = []
    for item in filter(None, (x.strip() for x in text.split(";"))):
        w = item.split()
        try:
            if w[0] == "call" and len(w) == 2:
                out.append(("call", int(w[1])))
            elif w[0] == "call" and len(w) >= 3:
                out.append(("call", int(w[1]), w[2], tuple(w[3:])))
            elif w[0] == "deliver" and len(w) == 3:
                out.append(("deliver", int(w[1]), int(w[2])))
            elif w[0] in ("tick", "crash") and len(w) == 2:
                out.append((w[0], int(w[1])))
            elif w == ["start"]:
                out.append(("start",))
            else:
                raise ValueError
        except ValueError:
            raise ConfigError(f"bad script step {item!r}") from None
    return tuple(out)


def parse_config(text: str) -> ScenarioSpec:
    """Parse ``key = value`` lines; ``bound`` and ``crash`` may repeat, ``#`` starts a comment.

    Keys: name, base (a library scenario to start from), protocol, n, f, k, seed,
    schedule, target, lazy, budget, ops, script, bound, crash.
    """
    fields: dict[str, Any] = {}
    bounds, crashes = [], []
    base = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in ("n", "f", "k", "seed", "target", "budget"):
                fields[key] = int(value)
            elif key in ("name", "protocol", "schedule", "description"):
                fields[key] = value
            elif key == "base":
                base = value
            elif key == "lazy":
                fields[key] = value.lower() in ("1", "true", "yes")
            elif key == "ops":
                fields[key] = _parse_ops(value)
            elif key == "script":
                fields[key] = _parse_script(value)
            elif key == "bound":
                metric, cmp, val = value.split()
                bounds.append(Bound(metric, cmp, float(val)))
            elif key == "crash":
                m = _CRASH.match(value)
                if not m:
                    raise ValueError(f"bad crash {value!r}; use 'NODE at STEP' or 'NODE after KIND COUNT [keep]'")
                node, at, kind, cnt, keep = m.groups()
                crashes.append(Crash(int(node), at_step=int(at) if at else None,
                                     after_sends=(kind, int(cnt)) if kind else None, keep_in_flight=bool(keep)))
            else:
                raise ValueError(f"unknown key {key!r}")
        except (ValueError, ScenarioError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    try:
        if base is not None:
            spec = get_scenario(base, fields.get("n"), fields.get("f"), fields.get("k"), fields.get("seed", 0))
            upd = {k: v for k, v in fields.items() if k != "k" or spec.schedule == "active-faulty"}
            spec = replace(spec, **upd)
        else:
            if "name" not in fields:
                raise ConfigError("config needs a name (or a base scenario)")
            spec = ScenarioSpec(**fields)
        if bounds:
            spec = replace(spec, bounds=tuple(bounds))
        if crashes:
            spec = replace(spec, crashes=tuple(crashes))
        if len(spec.crashes) > spec.f:
            raise ConfigError(f"{len(spec.crashes)} crashes exceed f={spec.f}")
    except ConfigError:
        raise
    except (TypeError, ScenarioError) as exc:
        raise ConfigError(str(exc)) from None
    return spec


def load_config(path: str | Path) -> ScenarioSpec:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def write_report(reports: list[LatencyReport], path: str | Path) -> None:
    """JSON report; each entry carries the per-event round table of its trace."""
    data = []
    for r in reports:
        d = r.to_json()
        d["rounds"] = round_table(r.trace) if r.trace is not None else []
        data.append(d)
    Path(path).write_text(json.dumps(data if len(data) > 1 else data[0], indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
