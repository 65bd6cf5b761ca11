"""Command-line interface.

One subcommand per pipeline stage plus `run` (all stages), `ingest`
(external annotation tables), `render` (timeline figures), and a standalone
`evaluate` mode for scoring any pair of event lists. Settings resolve in
the order: built-in defaults, then command-line flags, then the --config
file (config file entries take precedence over flags).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import PipelineConfig, parse_kv_file, write_kv_file
from .eventio import read_events
from .metrics import IntersectionConfig, intersection_f1, segment_metrics
from .soundscape import GenerationError
from .campaign import AssignmentError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdstrong",
        description="Estimate strong sound-event labels from crowdsourced weak labels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--seed", type=int, help="top-level random seed")
        p.add_argument("--out", type=Path, help="output directory")

    for name, helptext in [
        ("generate", "synthesize ground-truth soundscape timelines"),
        ("campaign", "sample the worker pool and build hit assignments"),
        ("simulate", "simulate workers answering the campaign"),
        ("mace", "estimate annotator competence and segment tags"),
        ("agreement", "compute inter-annotator agreement"),
    ]:
        add_common(sub.add_parser(name, help=helptext))

    p_aggregate = sub.add_parser("aggregate", help="estimate strong labels from weak labels")
    add_common(p_aggregate)
    p_aggregate.add_argument(
        "--mode",
        choices=["all", "filtered", "mace"],
        action="append",
        help="aggregation mode (repeatable; default: all three)",
    )
    p_aggregate.add_argument("--tau", type=float, help="binarization threshold in (0, 1]")

    p_eval = sub.add_parser(
        "evaluate", help="score estimated labels (pipeline artifacts, or --ref/--sys files)"
    )
    add_common(p_eval)
    p_eval.add_argument("--ref", type=Path, help="reference event list (tsv or jsonl)")
    p_eval.add_argument("--sys", type=Path, help="system event list (tsv or jsonl)")
    p_eval.add_argument("--dtc", type=float, help="detection tolerance criterion in (0, 1]")
    p_eval.add_argument("--gtc", type=float, help="ground-truth intersection criterion in (0, 1]")
    p_eval.add_argument("--segment-length", type=float, help="segment length in seconds")

    p_render = sub.add_parser("render", help="draw a timeline comparison figure")
    add_common(p_render)
    p_render.add_argument("--file", dest="file_id", help="file id to draw (default: first)")
    p_render.add_argument("--mode", choices=["all", "filtered", "mace"], help="estimate to draw")

    p_ingest = sub.add_parser("ingest", help="import external annotations from a CSV table")
    add_common(p_ingest)
    p_ingest.add_argument("--csv", type=Path, required=True, help="annotation table")
    p_ingest.add_argument(
        "--mapping", type=Path, help="flat key=value file mapping csv columns"
    )

    p_run = sub.add_parser("run", help="run every stage in order")
    add_common(p_run)

    p_cfg = sub.add_parser("config", help="print the resolved configuration")
    add_common(p_cfg)

    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    flat = PipelineConfig().to_flat()
    if getattr(args, "seed", None) is not None:
        flat["seed"] = str(args.seed)
    if getattr(args, "out", None) is not None:
        flat["out"] = str(args.out)
    if getattr(args, "tau", None) is not None:
        flat["aggregation.tau"] = f"{args.tau:g}"
    if getattr(args, "mode", None):
        if isinstance(args.mode, list):
            flat["aggregation.modes"] = ",".join(args.mode)
    if getattr(args, "segment_length", None) is not None:
        flat["metrics.segment_length"] = f"{args.segment_length:g}"
    if getattr(args, "dtc", None) is not None or getattr(args, "gtc", None) is not None:
        dtc = args.dtc if args.dtc is not None else 0.7
        gtc = args.gtc if args.gtc is not None else dtc
        flat["metrics.intersection"] = f"{dtc:g}:{gtc:g}"
    if getattr(args, "config", None) is not None:
        flat.update(parse_kv_file(args.config))
    config = PipelineConfig.from_flat(flat)
    return config.with_seed(config.seed)


def _score_files(args: argparse.Namespace, config: PipelineConfig) -> int:
    try:
        reference = read_events(args.ref)
        system = read_events(args.sys)
    except (OSError, ValueError) as exc:
        print(f"error: cannot parse input: {exc}", file=sys.stderr)
        return 1
    seg = segment_metrics(reference, system, segment_length=config.metrics.segment_length)
    print(f"segments of {seg.segment_length:g} s over {seg.n_reference} reference entries")
    print(
        f"ER {seg.error_rate:.4f}  (S {seg.substitution_rate:.4f}"
        f"  D {seg.deletion_rate:.4f}  I {seg.insertion_rate:.4f})"
    )
    print(f"F1 {seg.f1:.2f}  P {seg.precision:.2f}  R {seg.recall:.2f}")
    for dtc, gtc in config.metrics.intersection:
        rep = intersection_f1(reference, system, IntersectionConfig(dtc, gtc))
        print(
            f"intersection F1 (dtc={dtc:g}, gtc={gtc:g}): {rep.f1:.2f}"
            f"  [tp {rep.tp} fp {rep.fp} fn {rep.fn}; macro {rep.macro_f1:.2f}]"
        )
    for note in seg.notes:
        print(f"note: {note}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = resolve_config(args)
    except (OSError, ValueError) as exc:
        print(f"error: bad configuration: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(config.out)

    if args.command == "config":
        sys.stdout.write(config.to_text())
        return 0
    if args.command == "evaluate" and (args.ref or args.sys):
        if not (args.ref and args.sys):
            print("error: --ref and --sys must be given together", file=sys.stderr)
            return 2
        return _score_files(args, config)

    try:
        if args.command == "run":
            pipeline.run_all(config, out_dir)
            report = out_dir / pipeline.REPORT_TXT
            sys.stdout.write(report.read_text(encoding="utf-8"))
        elif args.command == "render":
            target = pipeline.stage_render(
                config, out_dir, file_id=args.file_id, mode=args.mode
            )
            print(f"wrote {target}")
        elif args.command == "ingest":
            mapping = parse_kv_file(args.mapping) if args.mapping else None
            pipeline.stage_ingest(config, out_dir, args.csv, mapping)
            print(f"wrote {out_dir / pipeline.ANNOTATIONS}")
        else:
            pipeline.STAGES[args.command](config, out_dir)
            if args.command == "evaluate":
                sys.stdout.write((out_dir / pipeline.REPORT_TXT).read_text(encoding="utf-8"))
            elif args.command == "agreement":
                sys.stdout.write((out_dir / pipeline.AGREEMENT).read_text(encoding="utf-8"))
        out_dir.mkdir(parents=True, exist_ok=True)
        write_kv_file(out_dir / "config.snapshot", config)
    except (pipeline.StageError, GenerationError, AssignmentError, OSError, ValueError) as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
