"""Command-line interface: check, flow, cfg, run, ni, slice, ifc, eval,
serve."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .apps import (
    SliceCriterion,
    ablation_report,
    compute_slice,
    ifc_check,
    resolve_span_criterion,
)
from .cfgir import dataflow, to_dot
from .checker import check_all, typecheck
from .harness import load_corpus, run_corpus_ni
from .infoflow import Mode, analyze_fn
from .interp import run_program, value_from_json, value_to_json
from .ownership import OxError
from .parser import OxSyntaxError, load_program
from .server import canonical_json, serve


def _load(path: str):
    return load_program(Path(path).read_text())


def _mode(name: str) -> Mode:
    aliases = {"whole": Mode.WHOLE, "modular": Mode.MODULAR,
               "mutblind": Mode.MUTBLIND, "refblind": Mode.REFBLIND}
    return aliases[name]


def cmd_check(args) -> int:
    program = _load(args.file)
    errors = check_all(program)
    ok = all(not errs for errs in errors.values())
    if args.json:
        typed = None
        payload = {"functions": []}
        if ok:
            typed = typecheck(program)
        for fn_name, errs in errors.items():
            entry = {"name": fn_name, "errors": [str(e) for e in errs], "locations": []}
            if typed is not None and fn_name in typed.functions:
                facts = typed.functions[fn_name]
                for lid, loc in sorted(facts.loc_table.items()):
                    entry["locations"].append(
                        {"id": lid, "span": loc.span.to_json(),
                         "type": str(facts.ty.get(lid, ""))}
                    )
            payload["functions"].append(entry)
        sys.stdout.buffer.write(canonical_json(payload))
    else:
        for fn_name, errs in errors.items():
            status = "ok" if not errs else "; ".join(str(e) for e in errs)
            print(f"{fn_name}: {status}")
    return 0 if ok else 1


def cmd_flow(args) -> int:
    program = _load(args.file)
    typed = typecheck(program)
    mode = _mode(args.mode)
    fns = [args.fn] if args.fn else [
        f for f, d in program.functions.items() if d.body is not None
    ]
    payload = []
    for fn_name in fns:
        if args.engine == "cfg":
            res = dataflow(typed, fn_name, mode)
            exit_theta = res.exit_theta
            loc_table = {}
            per_loc = []
        else:
            res = analyze_fn(program, fn_name, mode, facts=typed)
            exit_theta = res.exit_theta
            loc_table = res.loc_table
            per_loc = [
                {"id": lid, "kappa": sorted(lf.kappa)}
                for lid, lf in sorted(res.per_loc.items())
            ]

        def dep_json(ids):
            out = []
            for i in sorted(ids):
                item = {"id": i}
                if i in loc_table:
                    item["span"] = loc_table[i].span.to_json()
                out.append(item)
            return out

        payload.append(
            {
                "fn": fn_name,
                "mode": mode.value,
                "engine": args.engine,
                "exit_theta": [
                    {"place": str(k), "deps": dep_json(v)}
                    for k, v in sorted(exit_theta.items(), key=lambda kv: str(kv[0]))
                ],
                "per_location": per_loc,
            }
        )
    if args.json:
        sys.stdout.buffer.write(canonical_json({"functions": payload}))
    else:
        for entry in payload:
            print(f"fn {entry['fn']} [{entry['mode']}, {entry['engine']}]")
            for row in entry["exit_theta"]:
                ids = ", ".join(str(d["id"]) for d in row["deps"])
                print(f"  {row['place']} -> {{{ids}}}")
    return 0


def cmd_cfg(args) -> int:
    program = _load(args.file)
    typed = typecheck(program)
    fns = [args.fn] if args.fn else [
        f for f, d in program.functions.items() if d.body is not None
    ]
    for fn_name in fns:
        res = dataflow(typed, fn_name, _mode(args.mode))
        if args.dot:
            print(to_dot(res))
        else:
            for b in res.cfg.blocks:
                print(f"bb{b.id}:")
                for instr, _theta in res.per_instr[b.id]:
                    from .cfgir import _instr_str
                    print(f"  {_instr_str(instr)}")
                print(f"  -> {res.cfg.successors(b.id)}")
    return 0


def cmd_run(args) -> int:
    program = _load(args.file)
    typed = typecheck(program)
    fn = program.functions.get(args.entry)
    if fn is None or fn.body is None:
        print(f"no defined entry function {args.entry!r}", file=sys.stderr)
        return 1
    init = json.loads(args.init) if args.init else None
    arg = value_from_json(init, fn.param_ty) if init is not None else _default_value(fn.param_ty)
    value, stack = run_program(program, args.entry, arg, budget=args.budget)
    payload = {
        "value": value_to_json(value),
        "stack": [
            {var: value_to_json(v) for var, v in frame.items()} for frame in stack.frames
        ],
    }
    sys.stdout.buffer.write(canonical_json(payload))
    return 0


def _default_value(ty):
    from .syntax import TupleTy, BOOL_TY, UNIT_TY, strip_dead
    from .syntax import UNIT

    ty = strip_dead(ty)
    if isinstance(ty, TupleTy):
        return tuple(_default_value(t) for t in ty.elems)
    if ty == UNIT_TY:
        return UNIT
    if ty == BOOL_TY:
        return False
    return 0


def cmd_ni(args) -> int:
    modes = [_mode(m) for m in args.mode.split(",")] if args.mode else list(Mode)
    reports = run_corpus_ni(args.corpus, modes, trials=args.trials, seed=args.seed)
    total_viol = sum(len(r.violations) for r in reports)
    if args.json:
        payload = {
            "reports": [
                {
                    "program": r.program,
                    "fn": r.fn,
                    "mode": r.mode.value,
                    "trials": r.trials,
                    "checks_a": r.checks_a,
                    "checks_b": r.checks_b,
                    "skipped_budget": r.skipped_budget,
                    "violations": [v.detail for v in r.violations],
                }
                for r in reports
            ],
            "violations": total_viol,
        }
        sys.stdout.buffer.write(canonical_json(payload))
    else:
        for r in reports:
            flag = "ok" if r.passed else f"{len(r.violations)} VIOLATIONS"
            print(f"{r.program}:{r.fn} [{r.mode.value}] trials={r.trials} {flag}")
        print(f"total violations: {total_viol}")
    return 0 if total_viol == 0 else 1


def cmd_slice(args) -> int:
    program = _load(args.file)
    typed = typecheck(program)
    mode = _mode(args.mode)
    if args.var:
        crit = SliceCriterion(args.fn, var=args.var, direction=args.dir)
    else:
        line, col = (int(x) for x in args.at.split(":"))
        loc = resolve_span_criterion(program, args.fn, line, col)
        crit = SliceCriterion(args.fn, loc_id=loc, direction=args.dir)
    result = compute_slice(program, crit, mode, typed=typed)
    if args.json:
        sys.stdout.buffer.write(canonical_json(result.to_json()))
    else:
        print(f"{args.dir} slice of {crit.var or crit.loc_id} in {args.fn}:")
        for loc_id, span in zip(result.locations, result.spans):
            print(f"  loc {loc_id} @ {span.line}:{span.col}+{span.length}")
    return 0


def cmd_ifc(args) -> int:
    program = _load(args.file)
    typed = typecheck(program)
    violations = ifc_check(program, None, _mode(args.mode), typed=typed)
    if args.json:
        sys.stdout.buffer.write(
            canonical_json({"violations": [v.to_json() for v in violations]})
        )
    else:
        if not violations:
            print("no information-flow violations")
        for v in violations:
            chain = " -> ".join(str(c) for c in v.chain)
            print(f"{v.fn}: secure source {v.source} reaches sink at loc {v.sink_loc} via [{chain}]")
    return 0 if not violations else 1


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus)
    base = _mode(args.base)
    others = [_mode(m) for m in args.others.split(",")]
    report = ablation_report(corpus, base, others)
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
        print(f"wrote {len(report.rows)} rows to {args.csv}")
    if args.hist:
        Path(args.hist).write_text(report.histogram_json())
        print(f"wrote histogram data to {args.hist}")
    summary = report.summary()
    for mode, stats in summary.items():
        print(
            f"{mode}: cases={stats['cases']} zero_fraction={stats['zero_fraction']:.3f} "
            f"median_nonzero_pct={stats['median_nonzero_pct']:.3f}"
        )
    for prog, reason in report.skipped:
        print(f"skipped {prog}: {reason}", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    server = serve(args.files, args.port, static_dir=args.static, host=args.host)
    host, port = server.server_address[:2]
    print(f"serving on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oxflow",
        description="Ownership-based modular information flow analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="type and ownership check a program")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("flow", help="run the information flow analysis")
    p.add_argument("file")
    p.add_argument("--fn")
    p.add_argument("--mode", default="modular",
                   choices=["modular", "whole", "mutblind", "refblind"])
    p.add_argument("--engine", default="typed", choices=["typed", "cfg"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("cfg", help="print the lowered control-flow graph")
    p.add_argument("file")
    p.add_argument("--fn")
    p.add_argument("--mode", default="modular",
                   choices=["modular", "whole", "mutblind", "refblind"])
    p.add_argument("--dot", action="store_true", help="emit Graphviz text")
    p.set_defaults(func=cmd_cfg)

    p = sub.add_parser("run", help="evaluate a program")
    p.add_argument("file")
    p.add_argument("--entry", default="main")
    p.add_argument("--init", help="JSON value for the entry parameter")
    p.add_argument("--budget", type=int, default=1_000_000)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ni", help="randomized noninterference testing over a corpus")
    p.add_argument("corpus")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", help="comma-separated modes (default: all)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ni)

    p = sub.add_parser("slice", help="compute a program slice")
    p.add_argument("file")
    p.add_argument("--fn", required=True)
    p.add_argument("--var")
    p.add_argument("--at", help="LINE:COL of the criterion expression")
    p.add_argument("--dir", default="back", choices=["back", "fwd"])
    p.add_argument("--mode", default="modular",
                   choices=["modular", "whole", "mutblind", "refblind"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("ifc", help="check secure-source to insecure-sink flows")
    p.add_argument("file")
    p.add_argument("--mode", default="modular",
                   choices=["modular", "whole", "mutblind", "refblind"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ifc)

    p = sub.add_parser("eval", help="precision ablation across analysis modes")
    p.add_argument("corpus")
    p.add_argument("--base", default="modular",
                   choices=["modular", "whole", "mutblind", "refblind"])
    p.add_argument("--others", default="whole,mutblind,refblind")
    p.add_argument("--csv", help="write per-variable rows to a CSV file")
    p.add_argument("--hist", help="write histogram-ready JSON to a file")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="HTTP service for the slice explorer")
    p.add_argument("files", nargs="+")
    p.add_argument("--port", type=int, default=8675)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static", help="directory of frontend assets")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OxSyntaxError as exc:
        print(f"syntax error: {exc}", file=sys.stderr)
        return 2
    except OxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
