"""Command line: ``memsnoop <verb> ...``; see ``memsnoop <verb> -h``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from . import harness
from .attacker import Oracle, find_anchor, fuzzy_match
from .dram import AddressMap, Geometry, decode_commands, infer_address_map, read_command_log
from .osmodel import CriticalRange, MappingLog


def _value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _spec(args) -> harness.ExperimentSpec:
    over = {}
    for item in args.set or []:
        k, _, v = item.partition("=")
        over[k] = _value(v)
    for k in ("document", "ways", "seed", "output"):
        v = getattr(args, k, None)
        if v is not None:
            over[k] = v
    if args.spec:
        d = json.loads(Path(args.spec).read_text())
        d.update(over)
        return harness.ExperimentSpec.from_dict(d)
    return harness.make_spec(args.profile, args.setting, **over)


def _spec_args(p: argparse.ArgumentParser, setting: str = "None"):
    p.add_argument("spec", nargs="?", help="experiment spec (JSON); overrides --profile")
    p.add_argument("--profile", default="hunspell", choices=sorted(harness.PROFILES))
    p.add_argument("--setting", default=setting, choices=list(harness.SETTINGS))
    p.add_argument("--document", help="random, prose, queries or a document file")
    p.add_argument("--ways", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", help="artifact directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any other spec field (JSON value)")


def _ints(text: str) -> List[int]:
    return [int(x) for x in text.split(",") if x]


def cmd_run(args):
    res = harness.run_experiment(_spec(args))
    print(harness.report([res.row])[0], end="")
    print(f"({res.seconds:.1f}s)")


def cmd_sweep(args):
    spec = _spec(args)
    rows = harness.sweep_ways(spec, _ints(args.list), args.jobs)
    text, table = harness.ways_table(rows)
    print(text, end="")
    if spec.output:
        Path(spec.output).mkdir(parents=True, exist_ok=True)
        (Path(spec.output) / "ways.csv").write_text(table)


def cmd_cc(args):
    res = harness.controlled_baseline(_spec(args))
    print(harness.report([res.row])[0], end="")


def cmd_infer(args):
    """Probe file: one ``pa,rank,bg,bank,row,col`` per line (integers, 0x allowed)."""
    samples = []
    for line in Path(args.probes).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        f = [int(x, 0) for x in line.split(",")]
        samples.append((f[0], f[1:6]))
    amap = infer_address_map(samples, Geometry())
    text = amap.to_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text, end="")


def cmd_oracle(args):
    spec = _spec(args)
    oracle = harness.oracle_for(spec)
    out = args.file or "oracle.txt"
    oracle.save(out)
    print(f"{len(oracle)} patterns -> {out}")


def _critical(text: Optional[str]) -> Optional[CriticalRange]:
    if not text:
        return None
    iv = []
    for part in text.split(","):
        lo, hi = part.split(":")
        iv.append((int(lo, 0), int(hi, 0)))
    return CriticalRange(iv)


def cmd_decode(args):
    from .attacker import translate_trace
    amap = AddressMap.load(args.map) if args.map else AddressMap.default()
    with open(args.commands) as fh:
        bus = decode_commands(read_command_log(fh), amap)
    oracle = Oracle.load(args.oracle) if args.oracle else None
    crit = _critical(args.critical)
    if crit is None and oracle is not None:
        lo = min(min(p.lines) for p in oracle.patterns.values() if p.lines)
        hi = max(max(p.lines) for p in oracle.patterns.values() if p.lines) + 64
        crit = CriticalRange([(lo & ~0xFFF, (hi + 0xFFF) & ~0xFFF)])
    trace = translate_trace(bus, MappingLog.load(args.mapping), crit)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w") as fh:
        fh.write("cycle,RW,va\n")
        for t, va, w in zip(trace.timestamp.tolist(), trace.va.tolist(), trace.is_write.tolist()):
            fh.write(f"{t},{'W' if w else 'R'},{va:#x}\n")
    print(f"{len(trace)} records kept; {trace.stats}")
    if oracle is None:
        return
    if oracle.kind == "hashdict":
        trace = trace.after(find_anchor(trace, oracle))
    res = fuzzy_match(trace, oracle)
    body = {"stats": res.stats, "meta": res.meta, "tokens": res.tokens,
            "segments": [{"start": s.start, "end": s.end, "ranked": [[w, c] for w, c in s.ranked]}
                         for s in res.segments]}
    (out / "results.json").write_text(json.dumps(body, indent=1, sort_keys=True) + "\n")
    (out / "report.txt").write_text(harness.match_report(res))
    print(f"{len(res.tokens)} tokens -> {out / 'results.json'}")


def cmd_reproduce(args):
    files = harness.reproduce(args.output, args.jobs, _ints(args.ways))
    print(files["settings.txt"])
    print(files["ways.txt"], end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="memsnoop", description="Memory-bus snooping simulator and analysis.")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run", help="run one experiment")
    _spec_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-ways", help="one experiment per associativity")
    _spec_args(p, "SQ+PR")
    p.add_argument("--list", default="16,32,64,128,256", help="comma separated W values")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline-controlled", help="page-granular controlled-channel baseline")
    _spec_args(p)
    p.set_defaults(func=cmd_cc)

    p = sub.add_parser("infer-map", help="probe samples -> address map")
    p.add_argument("probes")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("oracle", help="build and export the oracle for a spec")
    _spec_args(p)
    p.add_argument("--file", help="oracle output file (default oracle.txt)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("decode", help="command log + mapping log -> VA trace (and matches)")
    p.add_argument("commands")
    p.add_argument("--mapping", required=True)
    p.add_argument("--map", help="address map file (default map when absent)")
    p.add_argument("--oracle", help="oracle file; enables matching")
    p.add_argument("--critical", help="lo:hi[,lo:hi...] VA ranges to keep")
    p.add_argument("-o", "--output", default="decoded")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("reproduce", help="full default experiment matrix")
    p.add_argument("-o", "--output", default="results")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--ways", default=",".join(map(str, harness.SWEEP_WAYS)))
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except harness.StageError as e:
        print(f"memsnoop: stage {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as e:
        print(f"memsnoop: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
