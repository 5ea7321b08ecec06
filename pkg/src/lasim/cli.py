"""Command-line driver: ``lasim run|list|fuzz|metrics|check``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from lasim.checkers import (
    BRUTE_FORCE_LIMIT, LinearizationError, brute_force_linearizable, check_la_properties,
    history_from_trace, linearize_by_learned_order,
)
from lasim.fuzz import covered_traces, protocol_corpus
from lasim.la import LaError
from lasim.metrics import round_table, summarize
from lasim.scenarios import (
    LIBRARY, ConfigError, ScenarioError, emit_table, get_scenario, load_config, run_scenario,
    write_report,
)
from lasim.sim import SimError
from lasim.trace import TraceError, export_trace, import_trace

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_UNKNOWN_SCENARIO = 3
EXIT_BAD_CONFIG = 4
EXIT_LIVENESS = 5
EXIT_BAD_TRACE = 6


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lasim", description="Lattice-agreement snapshot simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a library scenario or a config file")
    run.add_argument("name", nargs="?", help="library scenario name (same as --scenario)")
    run.add_argument("--scenario", help="library scenario name")
    run.add_argument("--config", help="scenario config file")
    run.add_argument("--all", action="store_true", help="run every library scenario and print the table")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--n", type=int, default=None)
    run.add_argument("--f", type=int, default=None)
    run.add_argument("--k", type=int, default=None, help="active faulty nodes (active-faulty scenario)")
    run.add_argument("--budget", type=int, default=None, help="step budget override")
    run.add_argument("--trace-out", help="write the execution trace (JSONL)")
    run.add_argument("--report-out", help="write the latency report (JSON)")

    sub.add_parser("list", help="list library scenarios")

    fz = sub.add_parser("fuzz", help="generate and check a random corpus")
    fz.add_argument("--seeds", default="0:1", help="seed range START:STOP (stop exclusive)")
    fz.add_argument("--runs", type=int, default=100, help="protocol runs per seed")
    fz.add_argument("--traces", type=int, default=0, help="covered abstract traces per seed")
    fz.add_argument("--max-n", type=int, default=5)
    fz.add_argument("--out", help="directory to write traces into")

    me = sub.add_parser("metrics", help="apply the metric suite to a trace file")
    me.add_argument("--trace", required=True)
    me.add_argument("--table", action="store_true", help="also print the per-event round table")

    ck = sub.add_parser("check", help="run the correctness checkers on a trace file")
    ck.add_argument("--trace", required=True)
    ck.add_argument("--no-liveness", action="store_true", help="skip the liveness verdict")
    return p


def _seed_range(text: str) -> range:
    try:
        if ":" in text:
            a, b = text.split(":", 1)
            return range(int(a), int(b))
        return range(int(text), int(text) + 1)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}") from None


def _cmd_run(args, out) -> int:
    name = args.scenario or args.name
    if args.all:
        specs = [get_scenario(nm, seed=args.seed or 0) for nm in LIBRARY]
    elif args.config:
        if name:
            print("error: give a scenario name or --config, not both", file=sys.stderr)
            return EXIT_USAGE
        specs = [load_config(args.config)]
    elif name:
        specs = [get_scenario(name, args.n, args.f, args.k, args.seed or 0)]
    else:
        print("error: give a scenario name, --config or --all", file=sys.stderr)
        return EXIT_USAGE
    if args.config:
        upd = {k: v for k, v in (("n", args.n), ("f", args.f), ("seed", args.seed)) if v is not None}
        specs = [replace(s, **upd) for s in specs]
    if args.budget is not None:
        specs = [replace(s, budget=args.budget) for s in specs]

    reports = [run_scenario(s) for s in specs]
    for r in reports:
        lat = "-" if r.max_latency is None else r.max_latency
        mean = "-" if r.mean_latency is None else f"{r.mean_latency:.3f}"
        m = r.metrics
        print(f"{r.name}: protocol={r.protocol} n={r.n} f={r.f} seed={r.seed} outcome={r.outcome} "
              f"events={r.events} max={lat} mean={mean} min={m.get('min_latency')} "
              f"ira={m.get('ira')} ntr={m.get('ntr')} lcc={m.get('lcc')} hop_cover={m.get('hop_cover')}",
              file=out)
        for v in r.violations:
            print(f"  VIOLATION {v}", file=out)
    if len(reports) > 1 or reports[0].column:
        table_reports = [r for r in reports if r.column]
        if table_reports:
            print(emit_table(table_reports), file=out)
    if args.trace_out:
        if len(reports) != 1:
            print("error: --trace-out needs a single scenario", file=sys.stderr)
            return EXIT_USAGE
        export_trace(reports[0].trace, args.trace_out)
    if args.report_out:
        write_report(reports, args.report_out)
    if any(r.liveness_failure for r in reports):
        return EXIT_LIVENESS
    return EXIT_OK if all(r.ok for r in reports) else EXIT_VIOLATION


def _cmd_list(out) -> int:
    for name in LIBRARY:
        s = get_scenario(name)
        print(f"{name:36s} protocol={s.protocol} n={s.n} f={s.f} schedule={s.schedule}", file=out)
    return EXIT_OK


def _cmd_fuzz(args, out) -> int:
    try:
        seeds = _seed_range(args.seeds)
    except argparse.ArgumentTypeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    outdir = Path(args.out) if args.out else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)
    runs = bad = traces = 0
    for seed in seeds:
        for i, t in enumerate(covered_traces(args.traces, seed=seed, max_n=args.max_n)):
            traces += 1
            if outdir:
                export_trace(t, outdir / f"covered-{seed}-{i}.trace")
        for cr in protocol_corpus(args.runs, seed=seed, max_n=args.max_n):
            runs += 1
            if outdir:
                export_trace(cr.trace, outdir / f"{cr.spec.name}-s{seed}.trace")
            if cr.report.violations:
                bad += 1
                print(f"{cr.spec.name} seed={seed}: " + "; ".join(cr.report.violations), file=out)
    print(f"fuzz: {runs} runs, {traces} covered traces, {bad} with violations", file=out)
    return EXIT_OK if bad == 0 else EXIT_VIOLATION


def _cmd_metrics(args, out) -> int:
    t = import_trace(args.trace)
    s = summarize(t)
    ntr = "-" if s.ntr is None else s.ntr
    print(f"IRA/NTR/LCC = {s.ira}/{ntr}/{s.lcc}", file=out)
    print(f"hop cover = {'-' if s.hop_cover is None else s.hop_cover}", file=out)
    if s.holes:
        print("holes: " + ", ".join(f"({a},{b})" for a, b in s.holes), file=out)
    if args.table:
        print("event ira ntr lcc", file=out)
        for row in round_table(t):
            print(f"{row['event']:5d} {row['ira']:3d} {'-' if row['ntr'] is None else row['ntr']:>3} "
                  f"{row['lcc']:3d}", file=out)
    return EXIT_OK


def _cmd_check(args, out) -> int:
    t = import_trace(args.trace)
    live = not args.no_liveness and t.outcome not in ("stopped", "budget")
    verdicts = check_la_properties(t, fair=live)
    ok = True
    for name, v in verdicts.items():
        ok &= v.ok
        print(f"{name}: {'ok' if v.ok else 'FAIL ' + v.detail}", file=out)
    if t.outcome == "budget" and not args.no_liveness:
        print("liveness: FAIL run exhausted its step budget", file=out)
        ok = False
    hist = history_from_trace(t)
    if hist:
        try:
            lin = linearize_by_learned_order(hist, t.n)
            print(f"linearizable: ok ({len(lin.order)} operations ordered)", file=out)
        except LinearizationError as exc:
            ok = False
            print(f"linearizable: FAIL {exc}", file=out)
        if sum(1 for h in hist if h.complete) <= BRUTE_FORCE_LIMIT:
            bf = brute_force_linearizable(hist, t.n)
            ok &= bf
            print(f"brute-force linearizable: {'ok' if bf else 'FAIL'}", file=out)
    return EXIT_OK if ok else EXIT_VIOLATION


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "run":
            return _cmd_run(args, out)
        if args.command == "list":
            return _cmd_list(out)
        if args.command == "fuzz":
            return _cmd_fuzz(args, out)
        if args.command == "metrics":
            return _cmd_metrics(args, out)
        return _cmd_check(args, out)
    except ConfigError as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNKNOWN_SCENARIO
    except (SimError, LaError) as exc:
        print(f"error: bad scenario parameters: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (TraceError, OSError, json.JSONDecodeError) as exc:
        print(f"error: bad trace: {exc}", file=sys.stderr)
        return EXIT_BAD_TRACE


if __name__ == "__main__":
    sys.exit(main())
