"""Pipeline stages: composable steps that read and write files.

Every stage reads only the artifacts of earlier stages, writes only its own
outputs, and stamps each output with the config hash and seed, so any stage
can be deleted and rerun byte-identically. Outputs are staged in a scratch
directory and published on success, so a failing stage leaves no partial
files behind.
"""

from __future__ import annotations

import shutil
from collections.abc import Mapping
from contextlib import contextmanager
from pathlib import Path

from . import eventio, mace as mace_mod, render as render_mod
from .aggregate import (
    AggregationMode,
    estimate_strong_labels,
    frame_counts_by_file,
    segment_tags_by_rule,
)
from .campaign import build_campaign, read_campaign_jsonl, write_campaign_jsonl
from .config import PipelineConfig
from .metrics import (
    IntersectionConfig,
    intersection_f1,
    krippendorff_alpha,
    segment_metrics,
    tag_prf,
)
from .rng import substream
from .soundscape import generate_soundscape
from .timeline import events_by_file, segment_ground_truth_tags, segment_timeline
from .workers import (
    ColumnMapping,
    ingest_annotations_csv,
    read_annotations_jsonl,
    read_pool_jsonl,
    sample_worker_pool,
    simulate_campaign,
    write_annotations_jsonl,
    write_pool_jsonl,
)

FILES = "files.jsonl"
EVENTS = "events.jsonl"
TRUTH_TSV_DIR = "truth_tsv"
POOL = "pool.jsonl"
CAMPAIGN = "campaign.jsonl"
ANNOTATIONS = "annotations.jsonl"
COMPETENCE = "competence.tsv"
POSTERIORS = "posteriors.jsonl"
MACE_TAGS = "mace_tags.jsonl"
REPORT_JSONL = "report.jsonl"
REPORT_TXT = "report.txt"
AGREEMENT = "agreement.jsonl"


def estimated_name(mode: str) -> str:
    return f"estimated_{mode}.jsonl"


class StageError(RuntimeError):
    """A stage could not run (missing or corrupt inputs, infeasible config)."""


@contextmanager
def staged_outputs(out_dir: Path):
    """Write outputs into a scratch dir; publish them only on success."""
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = out_dir / ".staging"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    for path in sorted(staging.rglob("*")):
        if path.is_dir():
            continue
        target = out_dir / path.relative_to(staging)
        target.parent.mkdir(parents=True, exist_ok=True)
        path.replace(target)
    shutil.rmtree(staging)


def _require(out_dir: Path, name: str, stage: str) -> Path:
    path = out_dir / name
    if not path.exists():
        raise StageError(f"stage {stage!r} needs {name}; run the producing stage first")
    return path


def _read_durations(out_dir: Path, stage: str) -> dict[str, float]:
    path = _require(out_dir, FILES, stage)
    return {str(r["file"]): float(r["duration"]) for r in eventio.read_jsonl_records(path)}


def stage_generate(config: PipelineConfig, out_dir: Path) -> None:
    """Synthesize ground-truth timelines: files.jsonl, events.jsonl, truth TSVs."""
    rng = substream(config.seed, "generate")
    events = generate_soundscape(config.soundscape, rng)
    header = config.header("generate")
    with staged_outputs(out_dir) as staging:
        file_records = [
            {"file": fid, "duration": config.soundscape.duration}
            for fid in config.soundscape.file_ids()
        ]
        eventio.write_jsonl_records(staging / FILES, file_records, header=header)
        eventio.write_events_jsonl(staging / EVENTS, events, header=header)
        tsv_dir = staging / TRUTH_TSV_DIR
        tsv_dir.mkdir()
        grouped = events_by_file(events)
        for fid in config.soundscape.file_ids():
            eventio.write_events_tsv(tsv_dir / f"{fid}.tsv", grouped.get(fid, []), header=header)


def stage_campaign(config: PipelineConfig, out_dir: Path) -> None:
    """Sample the worker pool and assign workers to every segment."""
    durations = _read_durations(out_dir, "campaign")
    pool = sample_worker_pool(
        config.campaign.worker_pool_size,
        config.population,
        config.soundscape.classes,
        substream(config.seed, "pool"),
    )
    hits = build_campaign(
        durations,
        [p.worker_id for p in pool],
        length=config.campaign.length,
        hop=config.campaign.hop,
        workers_per_hit=config.campaign.workers_per_hit,
        max_hits_per_worker=config.campaign.max_hits_per_worker,
        min_separation=config.campaign.min_separation,
        rng=substream(config.seed, "campaign"),
    )
    header = config.header("campaign")
    with staged_outputs(out_dir) as staging:
        write_pool_jsonl(staging / POOL, pool, header=header)
        write_campaign_jsonl(staging / CAMPAIGN, hits, header=header)


def stage_simulate(config: PipelineConfig, out_dir: Path) -> None:
    """Have the simulated workers answer every hit."""
    events = eventio.read_events_jsonl(_require(out_dir, EVENTS, "simulate"))
    hits = read_campaign_jsonl(
        _require(out_dir, CAMPAIGN, "simulate"), length=config.campaign.length
    )
    pool = read_pool_jsonl(_require(out_dir, POOL, "simulate"))
    annotations = simulate_campaign(
        hits, pool, events, config.soundscape.classes, seed=config.seed
    )
    with staged_outputs(out_dir) as staging:
        write_annotations_jsonl(staging / ANNOTATIONS, annotations, header=config.header("simulate"))


def stage_ingest(
    config: PipelineConfig,
    out_dir: Path,
    csv_path: Path,
    mapping: Mapping[str, str] | None = None,
) -> None:
    """Import externally collected annotations in place of the simulator."""
    column_mapping = ColumnMapping.from_mapping(mapping) if mapping else ColumnMapping()
    annotations = ingest_annotations_csv(csv_path, column_mapping)
    if not annotations:
        raise StageError(f"no annotations found in {csv_path}")
    header = config.header("ingest")
    durations: dict[str, float] = {}
    for ann in annotations:
        durations[ann.segment.file_id] = max(
            durations.get(ann.segment.file_id, 0.0), float(ann.segment.end)
        )
    with staged_outputs(out_dir) as staging:
        write_annotations_jsonl(staging / ANNOTATIONS, annotations, header=header)
        if not (out_dir / FILES).exists():
            records = [{"file": f, "duration": d} for f, d in sorted(durations.items())]
            eventio.write_jsonl_records(staging / FILES, records, header=header)


def stage_mace(config: PipelineConfig, out_dir: Path) -> None:
    """Estimate annotator competences, item posteriors, and segment tags."""
    annotations = read_annotations_jsonl(
        _require(out_dir, ANNOTATIONS, "mace"), segment_length=config.campaign.length
    )
    table = mace_mod.build_binary_instances(annotations, config.soundscape.classes)
    model, posteriors = mace_mod.run_mace(
        table,
        restarts=config.mace.restarts,
        iterations=config.mace.iterations,
        smoothing=config.mace.smoothing,
        seed=config.seed,
        tol=config.mace.tol,
        label_prior_yes=config.mace.label_prior_yes,
    )
    tags = mace_mod.predict_tags(posteriors, config.mace.decision_threshold)
    header = config.header("mace")
    with staged_outputs(out_dir) as staging:
        mace_mod.write_competence_tsv(staging / COMPETENCE, model, header=header)
        mace_mod.write_posteriors_jsonl(staging / POSTERIORS, posteriors, header=header)
        mace_mod.write_tags_jsonl(staging / MACE_TAGS, tags, header=header)


def stage_aggregate(config: PipelineConfig, out_dir: Path) -> None:
    """Estimate strong labels for each configured aggregation mode."""
    annotations = read_annotations_jsonl(
        _require(out_dir, ANNOTATIONS, "aggregate"), segment_length=config.campaign.length
    )
    durations = _read_durations(out_dir, "aggregate")
    vocabulary = config.soundscape.classes
    competence = None
    mace_tags = None
    if "filtered" in config.aggregation.modes:
        competence = mace_mod.read_competence_tsv(_require(out_dir, COMPETENCE, "aggregate"))
    if "mace" in config.aggregation.modes:
        mace_tags = mace_mod.read_tags_jsonl(_require(out_dir, MACE_TAGS, "aggregate"))
    header = config.header("aggregate")
    with staged_outputs(out_dir) as staging:
        for kind in config.aggregation.modes:
            mode = AggregationMode(
                kind=kind,
                competence_threshold=config.aggregation.competence_threshold,
                tau=config.aggregation.tau,
            )
            events = estimate_strong_labels(
                annotations,
                durations,
                vocabulary,
                mode,
                competence=competence,
                mace_tags=mace_tags,
            )
            eventio.write_events_jsonl(staging / estimated_name(kind), events, header=header)
            tsv_dir = staging / f"estimated_{kind}_tsv"
            tsv_dir.mkdir()
            grouped = events_by_file(events)
            for fid in sorted(durations):
                eventio.write_events_tsv(tsv_dir / f"{fid}.tsv", grouped.get(fid, []), header=header)


def _oracle_tags(config: PipelineConfig, events, durations):
    truth = {}
    by_file = events_by_file(events)
    for fid in sorted(durations):
        for seg in segment_timeline(
            fid, durations[fid], length=config.campaign.length, hop=config.campaign.hop
        ):
            truth[(fid, seg.start)] = segment_ground_truth_tags(by_file.get(fid, []), seg)
    return truth


def stage_evaluate(config: PipelineConfig, out_dir: Path) -> None:
    """Score tags and strong labels against the ground truth."""
    events = eventio.read_events_jsonl(_require(out_dir, EVENTS, "evaluate"))
    durations = _read_durations(out_dir, "evaluate")
    annotations = read_annotations_jsonl(
        _require(out_dir, ANNOTATIONS, "evaluate"), segment_length=config.campaign.length
    )
    truth_tags = _oracle_tags(config, events, durations)

    tag_rows = []
    for method in ("majority", "union"):
        predicted = segment_tags_by_rule(annotations, method)
        report = tag_prf(predicted, truth_tags)
        tag_rows.append((method, report))
    if (out_dir / MACE_TAGS).exists():
        predicted = mace_mod.read_tags_jsonl(out_dir / MACE_TAGS)
        tag_rows.append(("mace", tag_prf(predicted, truth_tags)))

    detection_rows = []
    for kind in config.aggregation.modes:
        path = out_dir / estimated_name(kind)
        if not path.exists():
            raise StageError(f"stage 'evaluate' needs {estimated_name(kind)}; run aggregate first")
        estimated = eventio.read_events_jsonl(path)
        seg_report = segment_metrics(
            events, estimated, durations=durations,
            segment_length=config.metrics.segment_length,
            classes=config.soundscape.classes,
        )
        inter_reports = [
            intersection_f1(events, estimated, IntersectionConfig(dtc, gtc))
            for dtc, gtc in config.metrics.intersection
        ]
        detection_rows.append((kind, seg_report, inter_reports))

    header = config.header("evaluate")
    records = []
    for method, rep in tag_rows:
        records.append(
            {
                "section": "tags",
                "method": method,
                "precision": round(rep.precision, 4),
                "recall": round(rep.recall, 4),
                "f1": round(rep.f1, 4),
                "tp": rep.tp,
                "fp": rep.fp,
                "fn": rep.fn,
            }
        )
    for kind, seg, inters in detection_rows:
        record = {
            "section": "detection",
            "mode": kind,
            "er": round(seg.error_rate, 6),
            "s": round(seg.substitution_rate, 6),
            "d": round(seg.deletion_rate, 6),
            "i": round(seg.insertion_rate, 6),
            "f1": round(seg.f1, 4),
            "precision": round(seg.precision, 4),
            "recall": round(seg.recall, 4),
        }
        for rep in inters:
            key = f"f1_dtc{rep.config.dtc:g}_gtc{rep.config.gtc:g}"
            record[key] = round(rep.f1, 4)
            record[key + "_macro"] = round(rep.macro_f1, 4)
        records.append(record)

    with staged_outputs(out_dir) as staging:
        eventio.write_jsonl_records(staging / REPORT_JSONL, records, header=header)
        (staging / REPORT_TXT).write_text(
            _format_report(config, tag_rows, detection_rows), encoding="utf-8"
        )


def _format_report(config: PipelineConfig, tag_rows, detection_rows) -> str:
    lines = [eventio.format_header(config.header("evaluate")), ""]
    lines.append("Tag quality vs ground truth (per segment, micro over classes)")
    lines.append(f"{'method':<12}{'precision':>10}{'recall':>10}{'f1':>10}")
    for method, rep in tag_rows:
        lines.append(f"{method:<12}{rep.precision:>10.1f}{rep.recall:>10.1f}{rep.f1:>10.1f}")
    lines.append("")
    lines.append(
        f"Strong labels vs ground truth ({config.metrics.segment_length:g} s segments)"
    )
    head = f"{'labels from':<12}{'ER':>7}{'S':>7}{'D':>7}{'I':>7}{'F1':>8}{'P':>8}{'R':>8}"
    for dtc, gtc in config.metrics.intersection:
        head += f"{'F1@' + format(dtc, 'g') + '/' + format(gtc, 'g'):>12}"
    lines.append(head)
    for kind, seg, inters in detection_rows:
        row = (
            f"{kind:<12}{seg.error_rate:>7.2f}{seg.substitution_rate:>7.2f}"
            f"{seg.deletion_rate:>7.2f}{seg.insertion_rate:>7.2f}"
            f"{seg.f1:>8.1f}{seg.precision:>8.1f}{seg.recall:>8.1f}"
        )
        for rep in inters:
            row += f"{rep.f1:>12.1f}"
        lines.append(row)
    lines.append("")
    return "\n".join(lines)


def stage_agreement(config: PipelineConfig, out_dir: Path) -> None:
    """Krippendorff's alpha before and after competence filtering."""
    annotations = read_annotations_jsonl(
        _require(out_dir, ANNOTATIONS, "agreement"), segment_length=config.campaign.length
    )
    vocabulary = config.soundscape.classes
    table = mace_mod.build_binary_instances(annotations, vocabulary)
    full = krippendorff_alpha(table)
    records = [
        {
            "scope": "all",
            "alpha": round(full.alpha, 6),
            "observed_disagreement": round(full.observed_disagreement, 6),
            "expected_disagreement": round(full.expected_disagreement, 6),
            "n_items": full.n_items,
            "n_opinions": full.n_opinions,
        }
    ]
    competence_path = out_dir / COMPETENCE
    if competence_path.exists():
        competence = mace_mod.read_competence_tsv(competence_path)
        threshold = config.aggregation.competence_threshold
        kept = [a for a in annotations if competence[a.worker_id] > threshold]
        retained_workers = sum(1 for t in competence.values() if t > threshold)
        filtered = krippendorff_alpha(mace_mod.build_binary_instances(kept, vocabulary))
        records.append(
            {
                "scope": "filtered",
                "threshold": threshold,
                "alpha": round(filtered.alpha, 6),
                "observed_disagreement": round(filtered.observed_disagreement, 6),
                "expected_disagreement": round(filtered.expected_disagreement, 6),
                "n_items": filtered.n_items,
                "n_opinions": filtered.n_opinions,
                "workers_retained": retained_workers,
                "workers_total": len(competence),
            }
        )
    with staged_outputs(out_dir) as staging:
        eventio.write_jsonl_records(staging / AGREEMENT, records, header=config.header("agreement"))


def stage_render(
    config: PipelineConfig,
    out_dir: Path,
    file_id: str | None = None,
    mode: str | None = None,
) -> Path:
    """Draw ground truth, estimated labels, and opinion counts for one file."""
    mode = mode or (config.aggregation.modes[0] if config.aggregation.modes else "all")
    events = eventio.read_events_jsonl(_require(out_dir, EVENTS, "render"))
    durations = _read_durations(out_dir, "render")
    estimated = eventio.read_events_jsonl(_require(out_dir, estimated_name(mode), "render"))
    annotations = read_annotations_jsonl(
        _require(out_dir, ANNOTATIONS, "render"), segment_length=config.campaign.length
    )
    if file_id is None:
        file_id = sorted(durations)[0]
    if file_id not in durations:
        raise StageError(f"unknown file {file_id!r}")
    competence = None
    mace_tags = None
    if mode == "filtered":
        competence = mace_mod.read_competence_tsv(_require(out_dir, COMPETENCE, "render"))
    if mode == "mace":
        mace_tags = mace_mod.read_tags_jsonl(_require(out_dir, MACE_TAGS, "render"))
    agg_mode = AggregationMode(
        kind=mode,
        competence_threshold=config.aggregation.competence_threshold,
        tau=config.aggregation.tau,
    )
    counts = frame_counts_by_file(
        annotations, durations, config.soundscape.classes, agg_mode,
        competence=competence, mace_tags=mace_tags,
    )[file_id]
    truth = [ev for ev in events if ev.file_id == file_id]
    est = [ev for ev in estimated if ev.file_id == file_id]
    target_name = f"timeline_{file_id}_{mode}.svg"
    with staged_outputs(out_dir) as staging:
        render_mod.render_timeline(
            truth, est, counts, staging / target_name,
            title=f"{file_id} ({mode}, tau={config.aggregation.tau:g})",
            hashsalt=config.config_hash,
        )
    return out_dir / target_name


STAGES = {
    "generate": stage_generate,
    "campaign": stage_campaign,
    "simulate": stage_simulate,
    "mace": stage_mace,
    "aggregate": stage_aggregate,
    "evaluate": stage_evaluate,
    "agreement": stage_agreement,
}

RUN_ORDER = ("generate", "campaign", "simulate", "mace", "aggregate", "evaluate", "agreement")


def run_all(config: PipelineConfig, out_dir: Path) -> None:
    """Run every stage in order into one output directory."""
    for name in RUN_ORDER:
        STAGES[name](config, out_dir)
