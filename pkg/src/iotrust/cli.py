"""Command line entry point.

Subcommands cover the operational surface: running scenarios to a report
directory (figures plus delimited data), verifying and replaying ledger
dumps, generating payload streams, and summarizing packet traces.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .ledger import Ledger
from .payloadgen import (CatGenParams, QuantGenParams, gen_categorical,
                         gen_quantitative)
from .trace import (DEFAULT_TAU_SPLIT, TraceParseError, ingest_trace,
                    split_sequences)
from .sim import (Scenario, describe_summary, inspect_summary,
                  reference_scenario, run, write_report)


def _cmd_sim_run(args: argparse.Namespace) -> int:
    scenario = Scenario.load(args.scenario)
    result = run(scenario)
    written = write_report(result, args.out, figures=not args.no_figures)
    print(describe_summary(result.summary()))
    print("report files:")
    for path in written:
        print(f"  {path}")
    return 1 if result.violations else 0


def _cmd_sim_reference(args: argparse.Namespace) -> int:
    text = reference_scenario().to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_ledger_verify(args: argparse.Namespace) -> int:
    ok = Ledger.verify_dump(Path(args.dump).read_text())
    print("ok" if ok else "corrupt")
    return 0 if ok else 1


def _cmd_ledger_replay(args: argparse.Namespace) -> int:
    try:
        ledger = Ledger.replay(Path(args.dump).read_text())
    except ValueError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    print(f"replayed {len(ledger.blocks)} blocks")
    for node_id in sorted(ledger.nodes):
        rec = ledger.nodes[node_id]
        banned = "-" if rec.banned_until is None else f"{rec.banned_until:g}"
        print(f"  {node_id}  reliability={rec.reliability:.6f}  banned_until={banned}")
    return 0


def _cmd_ledger_reliability(args: argparse.Namespace) -> int:
    try:
        ledger = Ledger.replay(Path(args.dump).read_text())
    except ValueError as exc:
        print(f"replay failed: {exc}", file=sys.stderr)
        return 1
    now = args.now
    if now is None:
        times = [b.payload["time"] for b in ledger.blocks if "time" in b.payload]
        now = max(times) if times else 0.0
    try:
        value = ledger.query_reliability(args.node, now)
    except KeyError:
        print(f"unknown node: {args.node}", file=sys.stderr)
        return 1
    print(f"{value:.6f}")
    return 0


def _cmd_payloadgen(args: argparse.Namespace) -> int:
    if args.mode == "quant":
        low, high = args.range
        values = gen_quantitative(QuantGenParams(
            range_low=low, range_high=high, hop=args.hop,
            n=args.n, rng_seed=args.seed))
        for v in values:
            print(f"{v:.6f}")
    else:
        categories = tuple(s for s in args.categories.split(",") if s)
        lo, hi = args.stability
        values = gen_categorical(CatGenParams(
            categories=categories, stability_min=lo,
            stability_max=hi, n=args.n, rng_seed=args.seed))
        for v in values:
            print(v)
    return 0


def _cmd_trace_stats(args: argparse.Namespace) -> int:
    try:
        with open(args.trace) as fp:
            packets = ingest_trace(fp, fmt=args.fmt)
    except (OSError, TraceParseError) as exc:
        print(f"unreadable trace: {exc}", file=sys.stderr)
        return 1
    sequences = split_sequences(packets, args.tau_split)
    pairs = sorted({(s.src, s.dst) for s in sequences})
    print(f"packets    {len(packets)}")
    print(f"pairs      {len(pairs)}")
    print(f"sequences  {len(sequences)}")
    if packets:
        span = max(p.timestamp for p in packets) - min(p.timestamp for p in packets)
        print(f"span       {span:.3f}s")
    for src, dst in pairs:
        theirs = [s for s in sequences if (s.src, s.dst) == (src, dst)]
        total = sum(len(s) for s in theirs)
        print(f"  {src}->{dst}: {len(theirs)} sequences, {total} packets")
    return 0


def _cmd_report_inspect(args: argparse.Namespace) -> int:
    try:
        doc = inspect_summary(args.summary)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"unreadable summary: {exc}", file=sys.stderr)
        return 1
    print(describe_summary(doc))
    return 1 if doc.get("violations") else 0


def _float_span(text: str):
    try:
        lo, hi = text.split(":", 1)
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}")


def _int_span(text: str):
    try:
        lo, hi = text.split(":", 1)
        return int(lo), int(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN:MAX, got {text!r}")


def _add_payloadgen_commands(sub: argparse._SubParsersAction) -> None:
    quant = sub.add_parser("quant", help="bounded random-walk floats")
    quant.add_argument("--range", type=_float_span, required=True,
                       metavar="LO:HI", help="value range")
    quant.add_argument("--hop", type=float, required=True,
                       help="max step between consecutive values")
    quant.add_argument("-n", "--n", dest="n", type=int, required=True)
    quant.add_argument("--seed", type=int, default=0)
    quant.set_defaults(func=_cmd_payloadgen, mode="quant")
    cat = sub.add_parser("cat", help="sticky categorical labels")
    cat.add_argument("--categories", required=True,
                     help="comma-separated category labels")
    cat.add_argument("--stability", type=_int_span, default=(1, 1),
                     metavar="MIN:MAX", help="run-length draw bounds")
    cat.add_argument("-n", "--n", dest="n", type=int, required=True)
    cat.add_argument("--seed", type=int, default=0)
    cat.set_defaults(func=_cmd_payloadgen, mode="cat")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="iotrust",
        description="Behavioral fingerprinting and ledger-backed device trust.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("sim", help="run or emit simulation scenarios")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    sim_run = sim_sub.add_parser("run", help="run a scenario and write its report")
    sim_run.add_argument("scenario", help="scenario JSON file")
    sim_run.add_argument("--out", required=True, help="report output directory")
    sim_run.add_argument("--no-figures", action="store_true",
                         help="skip rendering PNG figures")
    sim_run.set_defaults(func=_cmd_sim_run)
    sim_ref = sim_sub.add_parser("reference", help="emit the reference scenario")
    sim_ref.add_argument("--out", help="write to a file instead of stdout")
    sim_ref.set_defaults(func=_cmd_sim_reference)
    sim_verify = sim_sub.add_parser("verify-ledger",
                                    help="check a run's ledger dump integrity")
    sim_verify.add_argument("dump", help="ledger JSONL dump")
    sim_verify.set_defaults(func=_cmd_ledger_verify)

    ledger = sub.add_parser("ledger", help="verify or replay ledger dumps")
    ledger_sub = ledger.add_subparsers(dest="ledger_command", required=True)
    ledger_verify = ledger_sub.add_parser("verify", help="check dump integrity")
    ledger_verify.add_argument("dump", help="ledger JSONL dump")
    ledger_verify.set_defaults(func=_cmd_ledger_verify)
    ledger_replay = ledger_sub.add_parser(
        "replay", help="re-execute a dump and print final node state")
    ledger_replay.add_argument("dump", help="ledger JSONL dump")
    ledger_replay.set_defaults(func=_cmd_ledger_replay)
    ledger_rel = ledger_sub.add_parser(
        "reliability", help="replay a dump and print one node's reliability")
    ledger_rel.add_argument("dump", help="ledger JSONL dump")
    ledger_rel.add_argument("node", help="node id")
    ledger_rel.add_argument("--now", type=float, default=None,
                            help="query time (default: last block time)")
    ledger_rel.set_defaults(func=_cmd_ledger_reliability)

    payload = sub.add_parser("payloadgen", help="generate payload value streams")
    payload_sub = payload.add_subparsers(dest="mode", required=True)
    _add_payloadgen_commands(payload_sub)

    trace = sub.add_parser("trace", help="inspect traces, generate payloads")
    trace_sub = trace.add_subparsers(dest="trace_command", required=True)
    stats = trace_sub.add_parser("stats", help="per-pair sequence statistics")
    stats.add_argument("trace", help="trace file")
    stats.add_argument("--fmt", choices=("jsonl", "csv"), default="jsonl")
    stats.add_argument("--tau-split", type=float, default=DEFAULT_TAU_SPLIT,
                       help="sequence split threshold in seconds")
    stats.set_defaults(func=_cmd_trace_stats)
    gen = trace_sub.add_parser("gen", help="payload generator passthrough")
    gen_sub = gen.add_subparsers(dest="mode", required=True)
    _add_payloadgen_commands(gen_sub)

    report = sub.add_parser("report", help="inspect run reports")
    report_sub = report.add_subparsers(dest="report_command", required=True)
    inspect = report_sub.add_parser("inspect", help="summarize a summary.json")
    inspect.add_argument("summary", help="path to summary.json")
    inspect.set_defaults(func=_cmd_report_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
