"""Command-line interface.

Subcommands:
  run          one simulation session (default: a full tote, three cycles)
  campaign     N independent single-cycle tests with optional fault script
  replay       the shipped ten-test reference campaign
  eval         score a predicted box file against a ground-truth box file
  dump-config  print the default configuration as JSON

Outputs (traces, reports, tables) land in --outdir, or $BAGCELL_OUTDIR, or
./out. Exit codes: 0 success, 1 bad usage or malformed input files, 2 run
aborted (safety violations, or replay script entries that never matched).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from bagcell.config import CellConfig, ConfigInvalid, default_config
from bagcell.devices import FaultScript, MalformedFaultScript
from bagcell.report import (
    CampaignReport,
    config_digest,
    render_table,
    summarize_campaign,
    write_trace,
)
from bagcell.scenarios import REFERENCE_TESTS, build_reference_script
from bagcell.simulate import run_campaign, run_single
from bagcell.vision import MalformedBoxFile, evaluate, load_boxes

log = logging.getLogger(__name__)


def _load_config(path: Optional[str]) -> CellConfig:
    if path is None:
        return default_config()
    return CellConfig.from_file(path)


def _outdir(arg: Optional[str]) -> Path:
    path = Path(arg or os.environ.get("BAGCELL_OUTDIR", "out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_script(path: Optional[str]) -> Optional[FaultScript]:
    return FaultScript.from_file(path) if path else None


def _write_campaign_outputs(
    outdir: Path, report: CampaignReport, tracers, table_fmt: str
) -> None:
    (outdir / "report.json").write_text(report.to_json())
    ext = "csv" if table_fmt == "csv" else "md"
    (outdir / f"table.{ext}").write_text(render_table(report, table_fmt))
    for i, tracer in enumerate(tracers):
        write_trace(outdir / f"trace_{i:02d}.jsonl", tracer.records)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    script = _load_script(args.script)
    report, tracer = run_single(config, cycles=args.cycles, script=script)
    outdir = _outdir(args.outdir)
    write_trace(outdir / "trace.jsonl", tracer.records)
    campaign = summarize_campaign(
        [report], seed=config.seed, digest=config_digest(config.to_json())
    )
    (outdir / "report.json").write_text(campaign.to_json())
    print(
        f"cycles={report.cycles} detected={report.detected} picked={report.picked} "
        f"placed={report.placed} delivered={report.delivered} "
        f"duration={report.duration_min:.1f}min violations={report.violations}"
    )
    if report.violations:
        log.error("run finished with %d safety violations", report.violations)
        return 2
    return 0


def cmd_campaign(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    script = _load_script(args.script)
    reports, tracers = run_campaign(config, args.tests, script=script)
    unconsumed = len(script.unconsumed()) if script else 0
    if unconsumed:
        log.warning("%d fault script entries were never matched", unconsumed)
    campaign = summarize_campaign(
        reports,
        seed=config.seed,
        digest=config_digest(config.to_json()),
        unconsumed_script_entries=unconsumed,
    )
    outdir = _outdir(args.outdir)
    _write_campaign_outputs(outdir, campaign, tracers, args.table)
    print(render_table(campaign, args.table), end="")
    if any(r.violations for r in reports):
        log.error("campaign finished with safety violations")
        return 2
    return 0


def cmd_replay(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.seed = args.seed
    script = (
        FaultScript.from_file(args.script) if args.script else build_reference_script()
    )
    reports, tracers = run_campaign(config, REFERENCE_TESTS, script=script)
    unconsumed = len(script.unconsumed())
    campaign = summarize_campaign(
        reports,
        seed=config.seed,
        digest=config_digest(config.to_json()),
        unconsumed_script_entries=unconsumed,
    )
    outdir = _outdir(args.outdir)
    _write_campaign_outputs(outdir, campaign, tracers, args.table)
    print(render_table(campaign, args.table), end="")
    if unconsumed:
        log.error("%d fault script entries were never matched", unconsumed)
        return 2
    if any(r.violations for r in reports):
        log.error("replay finished with safety violations")
        return 2
    return 0


def cmd_eval(args) -> int:
    preds = load_boxes(args.preds)
    gts = load_boxes(args.gts)
    metrics = evaluate(preds, gts, iou_threshold=args.iou)
    out = {
        "precision": round(metrics.precision, 6),
        "recall": round(metrics.recall, 6),
        "f1": round(metrics.f1, 6),
        "ap": round(metrics.ap50, 6) if metrics.ap50 is not None else None,
        "tp": metrics.counts.tp,
        "fp": metrics.counts.fp,
        "fn": metrics.counts.fn,
        "iou_threshold": args.iou,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def cmd_dump_config(args) -> int:
    text = default_config().to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bagcell",
        description="Deterministic simulator of a bag-cutting and unpacking cell",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (defaults embedded)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--outdir", help="output directory (or $BAGCELL_OUTDIR)")

    p_run = sub.add_parser("run", parents=[common], help="run one session")
    p_run.add_argument("--cycles", type=int, help="feeding cycles (default from config)")
    p_run.add_argument("--fault-script", dest="script", help="fault script JSON")
    p_run.set_defaults(func=cmd_run)

    p_camp = sub.add_parser("campaign", parents=[common], help="run N single-cycle tests")
    p_camp.add_argument("--tests", type=int, default=10)
    p_camp.add_argument("--fault-script", dest="script", help="fault script JSON")
    p_camp.add_argument("--table", choices=("markdown", "csv"), default="markdown")
    p_camp.set_defaults(func=cmd_campaign)

    p_rep = sub.add_parser("replay", parents=[common], help="replay the reference campaign")
    p_rep.add_argument(
        "--fault-script", dest="script", help="override the built-in fault script"
    )
    p_rep.add_argument("--table", choices=("markdown", "csv"), default="markdown")
    p_rep.set_defaults(func=cmd_replay)

    p_eval = sub.add_parser("eval", help="score box files")
    p_eval.add_argument("--preds", required=True, help="predicted boxes file")
    p_eval.add_argument("--gts", required=True, help="ground-truth boxes file")
    p_eval.add_argument("--iou", type=float, default=0.5)
    p_eval.set_defaults(func=cmd_eval)

    p_dump = sub.add_parser("dump-config", help="print default config JSON")
    p_dump.add_argument("--out", help="write to file instead of stdout")
    p_dump.set_defaults(func=cmd_dump_config)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigInvalid, MalformedFaultScript, MalformedBoxFile) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
