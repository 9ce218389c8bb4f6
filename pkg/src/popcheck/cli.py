"""popcheck command line: check, gen, run, suite, catalog, sim-profiles."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .casegen import StepScript, Timing, distributed_plan, load_script, plan_case, save_script
from .catalog import catalog, lookup
from .cycles import check_consistency
from .dialects import LEVELS, dialect_names, normalize_level
from .harness import ENV_VAR, DecodeError, EndpointError, judge, load_config, parse_endpoint, run_case, run_suite
from .report import catalog_records, catalog_text
from .schedule import ScheduleError, parse_schedule
from .simdb import FAMILIES

OK, ANOMALY, ERROR = 0, 1, 2


def _timing(args) -> Timing:
    return Timing(args.delay, args.timeout, getattr(args, "block_threshold", None))


def _emit(args, text_fn, records):
    if args.format == "records":
        sys.stdout.write("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    else:
        print(text_fn())


def _schedules(args) -> list[str]:
    if args.file:
        lines = Path(args.file).read_text().splitlines()
        return [l.strip() for l in lines if l.strip() and not l.strip().startswith("#")]
    if args.schedule is None:
        raise ScheduleError("give a schedule or --file")
    return [args.schedule]


def cmd_check(args) -> int:
    anomalies = 0
    records, texts = [], []
    for text in _schedules(args):
        s = parse_schedule(text)
        v = check_consistency(s)
        anomalies += v.is_anomaly
        records.append({"schedule": str(s), **v.to_record()})
        lines = [v.summary()]
        if v.is_anomaly:
            lines.append(f"  cycle:   {v.cycle}")
            lines.append(f"  reduced: {v.reduced}")
        texts.append("\n".join(lines))
    _emit(args, lambda: "\n".join(texts), records)
    found = anomalies > 0
    if args.invert:
        found = not found
    return ANOMALY if found else OK


def _script_name(script: StepScript) -> str:
    tail = f"_d{len(set(script.placement.values()))}" if script.distributed else ""
    return f"case{script.case_id:02d}_{script.isolation}{tail}.json"


def cmd_gen(args) -> int:
    ids = [c.id for c in catalog()] if args.case == "all" else [int(args.case)]
    out = Path(args.out)
    if args.stdout and len(ids) != 1:
        raise ValueError("--stdout needs a single case")
    scripts = []
    for cid in ids:
        if args.distributed:
            scripts.append(distributed_plan(cid, args.distributed, args.mode, args.level,
                                            args.dialect, _timing(args)))
        else:
            scripts.append(plan_case(cid, args.level, args.dialect, _timing(args)))
    if args.stdout:
        print(json.dumps(scripts[0].to_dict(), indent=2))
        return OK
    out.mkdir(parents=True, exist_ok=True)
    for s in scripts:
        save_script(s, out / _script_name(s))
    print(f"wrote {len(scripts)} script(s) to {out}")
    return OK


def _endpoint(args):
    return parse_endpoint(args.endpoint or os.environ.get(ENV_VAR, ""), args.dialect_override)


def cmd_run(args) -> int:
    script = load_script(args.script)
    ep = _endpoint(args)
    trace = run_case(script, ep)
    outcome = judge(trace)
    if args.trace_out:
        Path(args.trace_out).write_text(json.dumps(
            {"trace": trace.to_record(), **outcome.to_record()}, indent=2, sort_keys=True) + "\n")
    rec = {"case": script.case_id, "level": script.isolation, "planned": str(script.schedule()),
           **outcome.to_record()}

    def text():
        return (f"case {script.case_id} {script.name} @ {script.isolation}: {outcome.letter}\n"
                f"  planned:  {script.schedule()}\n  executed: {outcome.schedule}\n"
                f"  {outcome.verdict.summary()}")
    _emit(args, text, [rec])
    return ANOMALY if outcome.letter == "A" else OK


def _case_list(text: str) -> list[int]:
    if text == "all":
        return [c.id for c in catalog()]
    ids = [int(x) for x in text.split(",") if x]
    for i in ids:
        lookup(i)
    return ids


def cmd_suite(args) -> int:
    ep = _endpoint(args)
    levels = [normalize_level(l) for l in args.levels.split(",")]
    m = run_suite(_case_list(args.cases), levels, ep, timing=_timing(args),
                  distributed=args.distributed, mode=args.mode, keep_traces=bool(args.traces))
    if args.traces:
        d = Path(args.traces)
        d.mkdir(parents=True, exist_ok=True)
        for (cid, lvl), cell in sorted(m.cells.items()):
            if cell.trace is not None:
                rec = {"trace": cell.trace.to_record(), **cell.outcome.to_record()}
                (d / f"case{cid:02d}_{lvl}.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    if args.format == "records":
        sys.stdout.write(m.render_records())
    else:
        print(m.render_text())
    if m.count("!"):
        return ERROR
    return ANOMALY if m.count("A") else OK


def cmd_catalog(args) -> int:
    cases = catalog()
    if args.format == "records":
        sys.stdout.write(catalog_records(cases))
    else:
        print(catalog_text(cases))
    return OK


def cmd_sim_profiles(args) -> int:
    records = [{"family": fam, "level": lvl, **asdict(p)}
               for fam, table in FAMILIES.items() for lvl, p in table.items()]

    def text():
        lines = []
        for fam, table in FAMILIES.items():
            lines.append(fam)
            for lvl, p in table.items():
                extra = [n for n in ("first_updater_abort", "consecutive_rw_abort", "short_read_locks")
                         if getattr(p, n)]
                timing = f" ({p.snapshot_timing})" if p.snapshot_timing else ""
                lines.append(f"  {lvl:<4} {p.lock_mode}, {p.read_mode}{timing}, {p.deadlock}"
                             + ("".join(f", {e}" for e in extra)))
        return "\n".join(lines)
    _emit(args, text, records)
    return OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--format", choices=("text", "records"), default="text")
    common.add_argument("--delay", type=float, default=0.1, help="seconds between steps")
    common.add_argument("--timeout", type=float, default=20.0, help="blocked-step timeout (s)")

    ep = argparse.ArgumentParser(add_help=False)
    ep.add_argument("--endpoint", help=f"sim:<family> or a database URL (default ${ENV_VAR})")
    ep.add_argument("--config", help="JSON connection config")
    ep.add_argument("--dialect", dest="dialect_override", choices=dialect_names(),
                    help="override the dialect implied by the endpoint")

    p = argparse.ArgumentParser(prog="popcheck", description="POP-graph consistency checker and tester")
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("check", parents=[common], help="check a schedule for anomalies")
    c.add_argument("schedule", nargs="?")
    c.add_argument("--file", help="one schedule per line; # starts a comment")
    c.add_argument("--invert", action="store_true", help="exit 1 when consistent, 0 on anomaly")
    c.set_defaults(func=cmd_check)

    g = sub.add_parser("gen", parents=[common], help="generate step scripts")
    g.add_argument("case", help="case id or 'all'")
    g.add_argument("--dialect", default="ansi", choices=dialect_names())
    g.add_argument("--level", default="rc", choices=sorted(LEVELS))
    g.add_argument("--distributed", type=int, metavar="N", help="spread objects over N partitions")
    g.add_argument("--mode", default="range-partition", choices=("range-partition", "table-per-object"))
    g.add_argument("--out", default="scripts")
    g.add_argument("--stdout", action="store_true")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", parents=[common, ep], help="run one script and judge it")
    r.add_argument("script")
    r.add_argument("--trace-out", help="write the trace and outcome as JSON")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("suite", parents=[common, ep], help="run cases x levels")
    s.add_argument("--cases", default="all", help="comma separated ids or 'all'")
    s.add_argument("--levels", "--level", default="ser", help="comma separated, e.g. rc,ser")
    s.add_argument("--distributed", type=int, metavar="N")
    s.add_argument("--mode", default="range-partition", choices=("range-partition", "table-per-object"))
    s.add_argument("--traces", help="directory for per-cell trace files")
    s.set_defaults(func=cmd_suite)

    k = sub.add_parser("catalog", parents=[common], help="list the anomaly catalog")
    k.set_defaults(func=cmd_catalog)

    sp = sub.add_parser("sim-profiles", parents=[common], help="list sim-db profile families")
    sp.set_defaults(func=cmd_sim_profiles)
    return p


def _apply_config(args, argv):
    cfg = load_config(args.config)
    given = set(a.split("=")[0] for a in argv if a.startswith("--"))
    if "--endpoint" not in given and "endpoint" in cfg:
        args.endpoint = cfg["endpoint"]
    if "--dialect" not in given and "dialect" in cfg:
        args.dialect_override = cfg["dialect"]
    if "--delay" not in given and "delay" in cfg:
        args.delay = cfg["delay"]
    if "--timeout" not in given and "timeout" in cfg:
        args.timeout = cfg["timeout"]
    args.block_threshold = cfg.get("block_threshold")
    if "--levels" not in given and "--level" not in given and "level" in cfg and hasattr(args, "levels"):
        args.levels = cfg["level"]


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "config", None):
            _apply_config(args, argv)
        return args.func(args)
    except (ScheduleError, EndpointError, DecodeError, KeyError, ValueError, OSError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"popcheck: error: {msg}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
