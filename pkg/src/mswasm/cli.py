"""Command-line front end.

Exit codes: 0 ok, 2 usage, 10 trap, 11 type error, 12 parse error,
13 monitor violation, 14 step budget exhausted, 15 differential divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import bytecode, conformance, interp, minic, monitor, tracerel
from .compiler import compile_module
from .minic import Safe, SrcParseError, SrcTypeError
from .typecheck import TypeError_, typecheck_module

EXIT_OK = 0
EXIT_TRAP = 10
EXIT_TYPE = 11
EXIT_PARSE = 12
EXIT_VIOLATION = 13
EXIT_BUDGET = 14
EXIT_DIVERGED = 15


def _load_module(path: str) -> bytecode.ModuleDef:
    return bytecode.parse_module(Path(path).read_text())


def cmd_parse(args) -> int:
    m = _load_module(args.file)
    sys.stdout.write(bytecode.print_module(m))
    return EXIT_OK


def cmd_typecheck(args) -> int:
    m = _load_module(args.file)
    typecheck_module(m)
    print("well-typed")
    return EXIT_OK


def cmd_run(args) -> int:
    m = _load_module(args.file)
    typecheck_module(m)
    res = interp.run(m, backend=args.backend, budget=args.budget,
                     segment_size=args.segment_size)
    jsonl = interp.trace_to_jsonl(res.trace)
    if args.trace:
        Path(args.trace).write_text(jsonl)
    elif args.json:
        sys.stdout.write(jsonl)
    else:
        sys.stdout.write(jsonl)
    if res.outcome == "trap":
        return EXIT_TRAP
    if res.outcome == "budget":
        return EXIT_BUDGET
    return EXIT_OK


def cmd_compile(args) -> int:
    tm = minic.src_typecheck(minic.parse_source(Path(args.file).read_text()))
    m = compile_module(tm, segment_size=args.segment_size)
    typecheck_module(m)
    text = bytecode.print_module(m)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check(args) -> int:
    m = _load_module(args.file)
    typecheck_module(m)
    res = interp.run(m, budget=args.budget)
    verdict = tracerel.check_ms(res.trace)
    if isinstance(verdict, Safe):
        print(f"safe ({len(res.trace)} events, outcome {res.outcome})")
        return EXIT_OK
    print(f"violation: {verdict}", file=sys.stderr)
    return EXIT_VIOLATION


def cmd_monitor(args) -> int:
    events = monitor.parse_abs_trace(Path(args.file).read_text())
    verdict = monitor.check_trace(events)
    if isinstance(verdict, monitor.Safe):
        print(f"safe ({len(events)} events)")
        return EXIT_OK
    print(f"violation at event {verdict.index}: {verdict.kind}", file=sys.stderr)
    return EXIT_VIOLATION


def cmd_diff(args) -> int:
    text = Path(args.file).read_text()
    report = conformance.diff_run_source(text)
    payload = {
        "related": report.related,
        "src_verdict": "safe" if isinstance(report.src_verdict, Safe)
        else f"unsafe@{report.src_verdict.index}",
        "src_events": len(report.src_trace),
        "tgt_events": len(report.tgt_trace),
    }
    if report.diverged:
        payload.update({"index": report.index, "reason": report.reason})
    if args.json:
        print(json.dumps(payload))
    else:
        for k, v in payload.items():
            print(f"{k}: {v}")
    return EXIT_DIVERGED if report.diverged else EXIT_OK


def _save_counterexample(outdir: Path, name: str, bundle: dict) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for key, value in bundle.items():
        (outdir / f"{name}.{key}").write_text(value)


def cmd_fuzz(args) -> int:
    failures = 0
    outdir = Path(args.out)
    t0 = time.perf_counter()
    for i in range(args.n):
        seed = args.seed + i
        if args.attacker:
            victim = conformance.fuzz_victim(seed)
            ctx = conformance.fuzz_attacker(victim, seed * 31 + 1)
            m = interp.link(victim, ctx)
            typecheck_module(m)
            res = interp.run(m, budget=args.budget)
            verdict = tracerel.check_ms(res.trace)
            bad = not isinstance(verdict, Safe)
            if bad:
                _save_counterexample(outdir, f"attacker-{seed}", {
                    "mswat": bytecode.print_module(m),
                    "tgt_trace": interp.trace_to_jsonl(res.trace),
                    "report": repr(verdict),
                })
        elif args.source:
            text = conformance.fuzz_source(seed, violations=(i % 2 == 0))
            report = conformance.diff_run_source(text)
            bad = report.diverged
            if bad:
                tm = minic.src_typecheck(minic.parse_source(text))
                _save_counterexample(outdir, f"diff-{seed}", {
                    "src": text,
                    "mswat": bytecode.print_module(compile_module(tm)),
                    "src_trace": "\n".join(repr(e) for e in report.src_trace),
                    "tgt_trace": interp.trace_to_jsonl(report.tgt_trace),
                    "report": f"{report.index}: {report.reason}",
                })
        else:
            m = conformance.fuzz_module(seed)
            typecheck_module(m)
            res = interp.run(m, budget=args.budget)
            verdict = tracerel.check_ms(res.trace)
            bad = not isinstance(verdict, Safe)
            if bad:
                _save_counterexample(outdir, f"module-{seed}", {
                    "mswat": bytecode.print_module(m),
                    "tgt_trace": interp.trace_to_jsonl(res.trace),
                    "report": repr(verdict),
                })
        failures += bad
    dt = time.perf_counter() - t0
    print(f"{args.n} runs, {failures} counterexamples, {dt:.2f}s")
    return EXIT_OK if failures == 0 else 1


def _bench_module(kind: str) -> bytecode.ModuleDef:
    b = bytecode
    if kind == "churn":
        body = []
        for _ in range(200):
            body += [b.const(b.ValueType.I32, 64), b.new_segment(), b.set_(0),
                     b.get(0), b.segfree()]
        body += [b.const(b.ValueType.I32, 0)]
        return b.ModuleDef((b.FuncDef((), (b.ValueType.HANDLE,),
                                      (b.ValueType.I32,), tuple(body)),),
                           (), 0, 1 << 16)
    if kind == "sweep":
        body = [b.const(b.ValueType.I32, 4096), b.new_segment(), b.set_(0)]
        for i in range(0, 4096, 4):
            body += [b.get(0), b.const(b.ValueType.I32, i), b.handle_add(),
                     b.const(b.ValueType.I32, i), b.segstore(b.ValueType.I32)]
        body += [b.const(b.ValueType.I32, 0)]
        return b.ModuleDef((b.FuncDef((), (b.ValueType.HANDLE,),
                                      (b.ValueType.I32,), tuple(body)),),
                           (), 0, 1 << 16)
    # handle.add chains through recursion
    step = b.FuncDef((b.ValueType.HANDLE, b.ValueType.I32), (),
                     (b.ValueType.HANDLE,), (
        b.get(1), b.const(b.ValueType.I32, 0), b.binop(b.ValueType.I32, "eq"),
        b.if_((b.get(0), b.return_()), ()),
        b.get(0), b.const(b.ValueType.I32, 1), b.handle_add(),
        b.get(1), b.const(b.ValueType.I32, 1), b.binop(b.ValueType.I32, "sub"),
        b.call(1), b.return_()))
    main = b.FuncDef((), (), (b.ValueType.I32,), (
        b.const(b.ValueType.I32, 64), b.new_segment(),
        b.const(b.ValueType.I32, 500), b.call(1),
        b.const(b.ValueType.I32, 0), b.segstore(b.ValueType.I32),
        b.const(b.ValueType.I32, 0)))
    return b.ModuleDef((main, step), (), 0, 1 << 16)


def cmd_bench(args) -> int:
    for backend in ("tagged", "baggy"):
        for kind in ("churn", "sweep", "handle-add"):
            m = _bench_module(kind)
            typecheck_module(m)
            reps = 0
            steps = 0
            t0 = time.perf_counter()
            while time.perf_counter() - t0 < args.seconds:
                config = interp.init_state(m, backend)
                while not config.terminal:
                    interp.step(config)
                    steps += 1
                reps += 1
            dt = time.perf_counter() - t0
            print(f"{backend:7s} {kind:10s} {steps / dt:12.0f} ops/sec "
                  f"({reps} reps)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mswasm",
                                description="segment-memory bytecode toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("parse", help="parse and reprint a module")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_parse)

    sp = sub.add_parser("typecheck", help="typecheck a module")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_typecheck)

    sp = sub.add_parser("run", help="run a module, emitting its trace")
    sp.add_argument("file")
    sp.add_argument("--backend", choices=("tagged", "baggy"), default="tagged")
    sp.add_argument("--trace", help="write JSON-lines trace here")
    sp.add_argument("--budget", type=int, default=interp.DEFAULT_BUDGET)
    sp.add_argument("--segment-size", type=int, default=None)
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("compile", help="compile a source program")
    sp.add_argument("file")
    sp.add_argument("-o", "--output")
    sp.add_argument("--segment-size", type=int, default=1 << 16)
    sp.set_defaults(fn=cmd_compile)

    sp = sub.add_parser("check", help="run + relate + monitor")
    sp.add_argument("file")
    sp.add_argument("--budget", type=int, default=interp.DEFAULT_BUDGET)
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("monitor", help="check an abstract JSON-lines trace")
    sp.add_argument("file")
    sp.set_defaults(fn=cmd_monitor)

    sp = sub.add_parser("diff", help="differential source-vs-compiled run")
    sp.add_argument("file")
    sp.add_argument("--json", action="store_true")
    sp.set_defaults(fn=cmd_diff)

    sp = sub.add_parser("fuzz", help="fuzz campaigns")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--attacker", action="store_true",
                    help="victim+attacker linking campaign")
    sp.add_argument("--source", action="store_true",
                    help="source-program differential campaign")
    sp.add_argument("--budget", type=int, default=1_000_000)
    sp.add_argument("--out", default="counterexamples")
    sp.set_defaults(fn=cmd_fuzz)

    sp = sub.add_parser("bench", help="micro-benchmarks on both backends")
    sp.add_argument("--seconds", type=float, default=0.5)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (bytecode.ParseError, bytecode.ValidationError, SrcParseError) as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (TypeError_, SrcTypeError) as e:
        print(f"type error: {e}", file=sys.stderr)
        return EXIT_TYPE
    except OSError as e:
        print(str(e), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
