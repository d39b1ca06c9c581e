"""Command-line entry point.

Exit codes: 0 success, 1 domain failure (unresolved cycle, replay
divergence), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .engine import CycleError, CycleMode, ManagerConsole, ManagerInputError, ReplayDivergence, replay_cycle
from .model import SchemaError, case_from_json, validate_case
from .scenarios import BUILTIN, builtin
from .similarity import ConfigError, SimilarityConfig
from .sim import ScenarioAborted, ScenarioConfig, ScenarioError, report_to_json, run_scenario, seed_poc_store
from .store import CaseStore, StoreError

log = logging.getLogger("bamcbr")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2
STORE_ENV = "BAMCBR_STORE"
CSV_COLUMNS = ("window", "tc", "utilization", "blocking", "preemption", "devolution", "bam")


class UsageError(Exception):
    pass


def _store_dir(args) -> Path:
    path = args.store or os.environ.get(STORE_ENV)
    if not path:
        raise UsageError(f"no store given (use --store or set {STORE_ENV})")
    return Path(path)


def _emit(args, payload: dict, text: str) -> None:
    print(json.dumps(payload, indent=2) if args.json else text)


def cmd_seed(args) -> int:
    out = Path(args.out)
    if CaseStore.exists(out) and not args.force:
        raise UsageError(f"{out} already holds a store; pass --force to overwrite")
    store = seed_poc_store()
    try:
        store.save(out)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc}") from None
    pos, neg = store.counts()
    _emit(args, {"store": str(out), "positive": pos, "negative": neg},
          f"seeded {out}: {pos} positive, {neg} negative")
    return EXIT_OK


def cmd_query(args) -> int:
    store = CaseStore.load(_store_dir(args))
    try:
        text = Path(args.case).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {args.case}: {exc}") from None
    case = case_from_json(text)
    issues = validate_case(case)
    if issues:
        raise SchemaError("; ".join(issues))
    config = SimilarityConfig.load(args.config) if args.config else SimilarityConfig()
    if args.theta is not None:
        config = config.with_theta(args.theta)
    result = store.retrieve(case, config, k=args.k)
    print(json.dumps(result.to_dict(), indent=2))
    return EXIT_OK


def _load_scenario(source: str) -> ScenarioConfig:
    if source in BUILTIN and not Path(source).exists():
        return ScenarioConfig.from_dict(builtin(source))
    try:
        return ScenarioConfig.load(source)
    except OSError as exc:
        raise UsageError(f"cannot read scenario {source}: {exc}") from None


def cmd_simulate(args) -> int:
    config = _load_scenario(args.scenario)
    overrides = {}
    if args.windows is not None:
        overrides["windows"] = args.windows
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        config = ScenarioConfig.from_dict({**config.to_dict(), **overrides})
    store_dir = Path(args.store or config.store or os.environ.get(STORE_ENV) or "")
    if not str(store_dir) or str(store_dir) == ".":
        raise UsageError(f"no store given (use --store or set {STORE_ENV})")
    store = CaseStore.load(store_dir) if CaseStore.exists(store_dir) else CaseStore()
    mode = CycleMode.parse(args.mode) if args.mode else config.mode
    manager = ManagerConsole(sys.stdin, sys.stderr) if mode is CycleMode.MANAGER else None

    status = EXIT_OK
    try:
        report = run_scenario(config, store, manager, mode)
    except ScenarioAborted as exc:
        report = exc.report
        if isinstance(exc.cause, (ManagerInputError, ScenarioError, ConfigError)):
            status = EXIT_USAGE
        else:
            status = EXIT_DOMAIN
        print(f"error: {exc}", file=sys.stderr)
        if report["cycles"]:
            print(json.dumps(report["cycles"][-1]["trace"], indent=2), file=sys.stderr)
    store.save(store_dir)
    if args.report:
        Path(args.report).write_text(report_to_json(report))

    s = report["summary"]
    text = (f"{config.name}: {s['windows']} windows, {s['alerts_fired']} alert(s), {s['cycles']} cycle(s), "
            f"{s['fallbacks']} fallback(s), retained +{s['retained_positive']} positive "
            f"+{s['retained_negative']} negative, final BAM {s['final_bam']} [{s['status']}]")
    _emit(args, s, text)
    return status


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: {exc}") from None


def cmd_replay(args) -> int:
    data = _load_json(args.trace)
    if isinstance(data, dict) and "cycles" in data:
        traces = [c["trace"] for c in data["cycles"]]
    elif isinstance(data, dict) and "trace" in data:
        traces = [data["trace"]]
    elif isinstance(data, list):
        traces = [data]
    else:
        raise UsageError(f"{args.trace}: no cycle trace found")
    store = CaseStore.load(_store_dir(args))
    results = []
    status = EXIT_OK
    for i, trace in enumerate(traces):
        try:
            replay_cycle(trace, store)
            results.append({"cycle": i, "verdict": "identical"})
        except ReplayDivergence as exc:
            results.append({"cycle": i, "verdict": "divergent", "detail": str(exc)})
            status = EXIT_DOMAIN
    lines = [f"cycle {r['cycle']}: {r['verdict']}" + (f" ({r['detail']})" if "detail" in r else "")
             for r in results]
    _emit(args, {"cycles": results}, "\n".join(lines) or "no cycles recorded")
    return status


def report_rows(report: dict):
    for row in report["windows"]:
        for tc in range(len(row["blocking"])):
            yield {
                "window": row["window"],
                "tc": tc,
                "utilization": row["utilization"][tc],
                "blocking": row["blocking"][tc],
                "preemption": row["preemption"][tc],
                "devolution": row["devolution"][tc],
                "bam": row["bam"],
            }


def write_csv(report: dict, fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in report_rows(report):
        writer.writerow(r)


def render_table(report: dict) -> str:
    lines = [f"scenario {report.get('scenario')} seed {report.get('seed')} mode {report.get('mode')}", ""]
    lines.append(f"{'win':>4} {'bam':<5} {'tc':>3} {'util':>7} {'block':>7} {'preempt':>8} {'devol':>7}")
    for r in report_rows(report):
        lines.append(f"{r['window']:>4} {r['bam']:<5} {r['tc']:>3} {r['utilization']:7.1f} {r['blocking']:7.1f}"
                     f" {r['preemption']:8.1f} {r['devolution']:7.1f}")
    fired = [a for a in report.get("alerts", []) if a.get("fired")]
    lines += ["", f"alerts fired: {len(fired)}"]
    for a in fired:
        lines.append(f"  window {a['window']}: {a['kind']} on TC{a['affected_tcs']}")
    lines.append(f"switches: {len(report.get('switches', []))}")
    for s in report.get("switches", []):
        lines.append(f"  window {s['window']}: {s['from']} -> {s['to']} bcs={s['bcs']} losses={s['losses']}")
    summary = report.get("summary", {})
    if summary:
        lines.append(f"status: {summary.get('status')}  final BAM: {summary.get('final_bam')}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    report = _load_json(args.report)
    if "windows" not in report:
        raise UsageError(f"{args.report}: not a run report")
    if args.csv:
        if args.out:
            with open(args.out, "w", newline="") as fh:
                write_csv(report, fh)
        else:
            write_csv(report, sys.stdout)
    else:
        text = render_table(report)
        if args.out:
            Path(args.out).write_text(text + "\n")
        else:
            print(text)
    if args.figures:
        from .plotting import render_report_figures

        for path in render_report_figures(report, args.figures):
            print(f"wrote {path}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bamcbr", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout")

    p = sub.add_parser("seed", help="write the six-case proof-of-concept store")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    common(p)
    p.set_defaults(func=cmd_seed)

    p = sub.add_parser("query", help="rank stored cases against a case file")
    p.add_argument("--store")
    p.add_argument("--case", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--theta", type=float)
    p.add_argument("--config")
    p.set_defaults(func=cmd_query, json=True)

    p = sub.add_parser("simulate", help="run a scenario against a store")
    p.add_argument("--scenario", required=True, help=f"scenario JSON file or one of {sorted(BUILTIN)}")
    p.add_argument("--store")
    p.add_argument("--mode", choices=("auto", "manager"))
    p.add_argument("--report")
    p.add_argument("--windows", type=int, help="override the run length")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="re-execute recorded cycle traces and compare decisions")
    p.add_argument("--trace", required=True, help="run report or single cycle trace")
    p.add_argument("--store")
    common(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="render a run report as a table or CSV, optionally with figures")
    p.add_argument("--report", required=True)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out")
    p.add_argument("--figures", help="directory for PNG figures")
    p.set_defaults(func=cmd_report, json=False)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.verbose == 0:
        logging.getLogger("bamcbr.similarity").setLevel(logging.ERROR)
    try:
        return args.func(args)
    except (UsageError, SchemaError, ConfigError, ScenarioError, StoreError, ManagerInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
