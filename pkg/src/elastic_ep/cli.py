"""Command-line front end: run, check, replay, sweep.

Exit status: 0 success, 1 assertion failure, 2 configuration or trace
format error, 3 unrecoverable run.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from . import scenario as scen
from .errors import ConfigurationError, TraceFormatError
from .sim.analysis import PAUSE_RESOLUTION, derive_throughput
from .sim.engine import run_scenario
from .sim.trace import EventTrace
from .summary import dumps, summarize, sweep_summary

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_UNRECOVERABLE = 0, 1, 2, 3


def _write_tsv(path: Path, columns: List[str], rows) -> None:
    lines = ["\t".join(columns)]
    for row in rows:
        lines.append("\t".join("" if v is None else (f"{v:.6f}" if isinstance(v, float) else str(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


def write_plot_data(out: Path, trace: EventTrace, summary: Dict) -> None:
    plot = out / "plot"
    plot.mkdir(parents=True, exist_ok=True)
    horizon = trace.records[-1]["t"]
    smooth = derive_throughput(trace, window=5.0, step=PAUSE_RESOLUTION, horizon=horizon)
    fine = derive_throughput(trace, window=PAUSE_RESOLUTION, step=PAUSE_RESOLUTION, horizon=horizon)
    _write_tsv(plot / "throughput_ma5.tsv", ["time_s", "tokens_per_s"], zip(smooth.times.tolist(), smooth.values.tolist()))
    _write_tsv(plot / "throughput_fine.tsv", ["time_s", "tokens_per_s"], zip(fine.times.tolist(), fine.values.tolist()))
    _write_tsv(plot / "pauses.tsv", ["start_s", "end_s", "duration_s"], summary["pauses"])
    _write_tsv(plot / "plateaus.tsv", ["start_s", "end_s", "tokens_per_s"], summary["plateaus"])
    phase_names = ["detection", "metadata", "timeout_wait", "peer_transfer", "backup_load"]
    _write_tsv(plot / "recovery_phases.tsv", ["failure"] + [p + "_s" for p in phase_names],
               [[i] + [f["phases"][p] for p in phase_names] for i, f in enumerate(summary["failures"])])
    tiers = ["local_reuse", "peer_relocation", "dram_reload"]
    _write_tsv(plot / "source_mix.tsv", ["failure"] + [t + "_pct" for t in tiers],
               [[i] + [f["mix_pct"][t] for t in tiers] for i, f in enumerate(summary["failures"])])


def write_sweep_plot_data(out: Path, sweep: Dict) -> None:
    plot = out / "plot"
    plot.mkdir(parents=True, exist_ok=True)
    rows = sweep["variants"]
    phase_names = ["detection", "metadata", "peer_transfer", "backup_load"]
    _write_tsv(plot / "sweep_recovery_phases.tsv", ["failed_ranks"] + [p + "_s" for p in phase_names],
               [[r["failed_ranks"]] + [r["phases"][p] if r["phases"] else None for p in phase_names] for r in rows])
    tiers = ["local_reuse", "peer_relocation", "dram_reload"]
    _write_tsv(plot / "sweep_source_mix.tsv", ["failed_ranks"] + [t + "_pct" for t in tiers],
               [[r["failed_ranks"]] + [r["mix_pct"][t] if r["mix_pct"] else None for t in tiers] for r in rows])
    _write_tsv(plot / "sweep_post_recovery.tsv", ["failed_ranks", "healthy_tokens_per_s", "post_tokens_per_s"],
               [[r["failed_ranks"], r["healthy_plateau"], r["post_plateau"]] for r in rows])
    _write_tsv(plot / "sweep_pause2.tsv", ["failed_ranks", "second_pause_s"],
               [[r["failed_ranks"], r["pause2"]] for r in rows])


def run_config(config: scen.ScenarioConfig, out: Path, seed: Optional[int] = None,
               trace_level: str = "info", echo=print) -> Tuple[Dict, bool]:
    """Run every variant of ``config`` into ``out``.

    Returns the top-level summary written there and whether any variant
    ended unrecoverable.
    """
    out.mkdir(parents=True, exist_ok=True)
    variants = config.variants()
    summaries = {}
    for variant, faults in variants:
        target = out if config.sweep is None else out / variant
        target.mkdir(parents=True, exist_ok=True)
        trace = run_scenario(trace_level=trace_level, **config.run_kwargs(faults, variant, seed))
        trace.write(target / "trace.jsonl")
        summary = summarize(trace)
        (target / "summary.json").write_text(dumps(summary))
        write_plot_data(target, trace, summary)
        summaries[variant] = summary
        failed = [k for k, ok in summary["assertions"].items() if not ok]
        echo(f"{variant}: {'ok' if summary['ok'] else 'FAIL ' + ','.join(failed)} "
             f"pauses={len(summary['pauses'])} healthy={summary['healthy_plateau']} tok/s")
    unrecoverable = any(s["unrecoverable"] is not None for s in summaries.values())
    if config.sweep is None:
        return summaries[config.name], unrecoverable
    sweep = sweep_summary(config.name, summaries, config.expect, list(config.sweep.failed_ranks))
    (out / "summary.json").write_text(dumps(sweep))
    write_sweep_plot_data(out, sweep)
    failed = [k for k, ok in sweep["assertions"].items() if not ok]
    echo(f"{config.name}: {'ok' if sweep['ok'] else 'FAIL ' + ','.join(failed)} ({len(variants)} variants)")
    return sweep, unrecoverable


def _status(summary: Dict, unrecoverable: bool, enforce: bool) -> int:
    if unrecoverable:
        return EXIT_UNRECOVERABLE
    if enforce and not summary["ok"]:
        return EXIT_ASSERT
    return EXIT_OK


def _cmd_run(args) -> int:
    config = scen.load(args.config)
    summary, unrecoverable = run_config(config, Path(args.out), args.seed, args.trace_level)
    return _status(summary, unrecoverable, args.enforce)


def _cmd_sweep(args) -> int:
    code = EXIT_OK
    for name in args.config:
        config = scen.load(name)
        sub = Path(args.out) / config.name
        summary, unrecoverable = run_config(config, sub, args.seed, args.trace_level)
        code = max(code, _status(summary, unrecoverable, args.enforce))
    return code


def _cmd_check(args) -> int:
    text, source = scen.resolve(args.config)
    diagnostics = scen.check_text(text, source)
    for d in diagnostics:
        print(f"{source}: {d}")
    if not diagnostics:
        print(f"{source}: ok")
    return EXIT_CONFIG if diagnostics else EXIT_OK


def _cmd_replay(args) -> int:
    trace = EventTrace.read(args.trace)
    text = dumps(summarize(trace))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elastic-ep", description="Elastic expert-parallel serving simulator")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, many=False):
        if many:
            p.add_argument("--config", action="append", required=True,
                           help="scenario file or bundled name; repeat to run several")
        else:
            p.add_argument("--config", required=True, help="scenario file or bundled scenario name")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--assert", dest="enforce", action="store_true", default=True,
                       help="exit nonzero when an embedded assertion fails (default)")
        p.add_argument("--no-assert", dest="enforce", action="store_false")
        p.add_argument("--trace-level", choices=("info", "debug"), default="info")

    run = sub.add_parser("run", help="simulate one scenario (all variants of a sweep scenario)")
    common(run)
    run.set_defaults(func=_cmd_run)
    sweep = sub.add_parser("sweep", help="run several scenarios consecutively")
    common(sweep, many=True)
    sweep.set_defaults(func=_cmd_sweep)
    check = sub.add_parser("check", help="validate a scenario without simulating")
    check.add_argument("--config", required=True)
    check.set_defaults(func=_cmd_check)
    replay = sub.add_parser("replay", help="recompute the summary of a trace file")
    replay.add_argument("trace")
    replay.add_argument("--out", default=None, help="write the summary here instead of stdout")
    replay.set_defaults(func=_cmd_replay)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except scen.ScenarioError as exc:
        for d in exc.diagnostics:
            print(f"{exc.path or ''}: {d}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, TraceFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
