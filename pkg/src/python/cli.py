"""
Command-line entry point.

    python -m src.python.cli route --benchmark B --strategy S --out DIR
    python -m src.python.cli evolve --config C [--dry-run]
    python -m src.python.cli resume --run DIR
    python -m src.python.cli select --run DIR [--out F]
    python -m src.python.cli report --run DIR [--out F]
    python -m src.python.cli plot --run DIR --out F
    python -m src.python.cli export-git --run DIR --repo PATH

Exit codes: 0 success, 1 usage/config/parse error, 2 infeasible route.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from .benchmark_io import emit_guides, load_benchmark
from .config import DEFAULT_CONFIG_PATH, load_config
from .errors import RoutingEvolutionError
from .evaluate import DEFAULT_EXPANSION, DEFAULT_SLACK, QorRecord, evaluation_runner, run_flow
from .evolve import RunPaths, baseline_text, export_git, load_design, resume, run_evolution
from .pareto import ObjectiveSpec
from .report import RunView, build_report, plot_run
from .store import candidate_id
from .strategy import load_strategy

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _format_qor(label: str, values: dict) -> str:
    return f"{label}: " + " ".join(f"{k}={v:g}" for k, v in values.items())


def run_objective(run_dir) -> ObjectiveSpec:
    """Objectives from the run's config snapshot, without touching the run."""
    snapshot = RunPaths(Path(run_dir)).snapshot
    if not snapshot.exists():
        return ObjectiveSpec()
    return load_config(snapshot).objective


def print_status(record: QorRecord) -> None:
    """One line per persisted iteration."""
    dr_wl = f"{record.qor.dr_wl:.1f}" if record.qor is not None else "-"
    gr_rt = f"{record.qor.gr_rt:.3f}" if record.qor is not None else "-"
    print(f"{record.iteration:4d}  {record.candidate_id[:12]}  {record.status.value:<11}  dr_wl={dr_wl}  gr_rt={gr_rt}")


# ----- commands --------------------------------------------------------------

def cmd_route(args) -> int:
    benchmark = load_benchmark(args.benchmark)
    strategy = load_strategy(Path(args.strategy).read_text(encoding="utf-8"))
    design = benchmark.to_design()
    flow = run_flow(strategy, design, expansion=args.expansion, slack=args.slack)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    guides = out / "guides.txt"
    guides.write_text(emit_guides(flow.nets), encoding="utf-8")
    print(f"✓ Guides written to {guides}")

    gr = flow.qor.model_dump(include={"gr_wl", "gr_vc", "gr_twl", "gr_rt", "mo", "to"})
    print(_format_qor("GR", gr))
    if not flow.feasible:
        print(
            f"DR: infeasible (overflow {flow.dr_overflow}, unrouted {len(flow.detail.unrouted)})",
            file=sys.stderr,
        )
        return EXIT_INFEASIBLE
    dr = flow.full_qor().model_dump(include={"dr_wl", "dr_vc", "dr_twl", "dr_rt"})
    print(_format_qor("DR", dr))
    return EXIT_OK


def cmd_evolve(args) -> int:
    config = load_config(args.config)
    if args.dry_run:
        evaluate = evaluation_runner(
            load_design(config.design),
            clock_factory=config.clock.factory(),
            limits=config.limits.resource_limits(),
            expansion=config.detail.expansion,
            slack=config.detail.slack,
        )
        doc = baseline_text(config.baseline)
        record = evaluate(doc, candidate_id=candidate_id(doc), iteration=0)
        print_status(record)
        if not record.ok:
            print(f"baseline is {record.status.value}: {record.note}", file=sys.stderr)
            return EXIT_ERROR
        print("✓ Config valid; baseline evaluated (nothing written)")
        return EXIT_OK
    run_dir = run_evolution(config, on_record=print_status)
    print(f"✓ Run complete: {run_dir}")
    return EXIT_OK


def cmd_resume(args) -> int:
    run_dir = resume(args.run, on_record=print_status)
    print(f"✓ Run complete: {run_dir}")
    return EXIT_OK


def cmd_select(args) -> int:
    view = RunView(args.run)
    chosen = view.selected(run_objective(args.run))
    print(chosen)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(view.document(chosen), encoding="utf-8")
        print(f"✓ Strategy exported to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    frame = build_report(RunView(args.run))
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False)
        print(f"✓ Report written to {out} ({len(frame)} rows)")
    else:
        frame.to_csv(sys.stdout, index=False)
    return EXIT_OK


def cmd_plot(args) -> int:
    sidecar = plot_run(RunView(args.run), args.out, run_objective(args.run))
    print(f"✓ Plot written to {args.out}")
    print(f"✓ Plot data written to {sidecar}")
    return EXIT_OK


def cmd_export_git(args) -> int:
    commits = export_git(args.run, args.repo)
    print(f"✓ Exported {commits} commits to {args.repo}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="router-evolve",
        description="Evolve global-routing strategies against a detailed-routing proxy",
    )
    parser.add_argument(
        '--log-level',
        default='WARNING',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
        help='Logging level (default: WARNING)'
    )
    commands = parser.add_subparsers(dest="command", required=True)

    route = commands.add_parser("route", help="Route a benchmark with one strategy")
    route.add_argument('--benchmark', '-b', type=str, required=True, help='Benchmark file (.gr)')
    route.add_argument('--strategy', '-s', type=str, required=True, help='Strategy document')
    route.add_argument('--out', '-o', type=str, required=True, help='Output directory for guides')
    route.add_argument(
        '--expansion',
        type=int,
        default=DEFAULT_EXPANSION,
        help=f'DR proxy refinement factor (default: {DEFAULT_EXPANSION})'
    )
    route.add_argument(
        '--slack',
        type=int,
        default=DEFAULT_SLACK,
        help=f'DR corridor slack in GCells (default: {DEFAULT_SLACK})'
    )
    route.set_defaults(handler=cmd_route)

    evolve = commands.add_parser("evolve", help="Start an evolution run")
    evolve.add_argument(
        '--config', '-c',
        type=str,
        default=str(DEFAULT_CONFIG_PATH),
        help=f'Evolution config (default: {DEFAULT_CONFIG_PATH})'
    )
    evolve.add_argument('--dry-run', action='store_true', help='Validate the config and evaluate the baseline only')
    evolve.set_defaults(handler=cmd_evolve)

    resume_cmd = commands.add_parser("resume", help="Continue an interrupted run")
    resume_cmd.add_argument('--run', '-r', type=str, required=True, help='Run directory')
    resume_cmd.set_defaults(handler=cmd_resume)

    select_cmd = commands.add_parser("select", help="Print the selected candidate id")
    select_cmd.add_argument('--run', '-r', type=str, required=True, help='Run directory')
    select_cmd.add_argument('--out', '-o', type=str, default=None, help='Write the selected strategy document here')
    select_cmd.set_defaults(handler=cmd_select)

    report = commands.add_parser("report", help="CSV table of every history record")
    report.add_argument('--run', '-r', type=str, required=True, help='Run directory')
    report.add_argument('--out', '-o', type=str, default=None, help='Output CSV (default: stdout)')
    report.set_defaults(handler=cmd_report)

    plot = commands.add_parser("plot", help="Pareto plot (SVG) with a CSV data sidecar")
    plot.add_argument('--run', '-r', type=str, required=True, help='Run directory')
    plot.add_argument('--out', '-o', type=str, required=True, help='Output SVG file')
    plot.set_defaults(handler=cmd_plot)

    export = commands.add_parser("export-git", help="Replay the candidate chain into a Git repository")
    export.add_argument('--run', '-r', type=str, required=True, help='Run directory')
    export.add_argument('--repo', type=str, required=True, help='Target repository path')
    export.set_defaults(handler=cmd_export_git)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """CLI entry point."""
    load_dotenv()
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_ERROR
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s - %(levelname)s - %(message)s'
    )
    try:
        return args.handler(args)
    except (RoutingEvolutionError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
