"""Evaluation instruments.

Four families: micro precision/recall/F1 on segment tags, segment-based error
rate with substitution/deletion/insertion decomposition on a fixed grid,
intersection-based event F1 under detection-tolerance and ground-truth
coverage criteria, and Krippendorff's alpha for inter-annotator agreement on
the binary opinion decomposition. All functions are pure and deterministic;
precision/recall/F1 are reported as percentages, rates as plain ratios.
"""

from __future__ import annotations


from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .mace import BinaryOpinionTable, SegmentKey
from .timeline import (
    EventInstance,
    events_by_file,
    durations_from_events,
    overlap,
    quantize_events_to_frames,
)
from .validation import check_unit_interval


def _prf_percent(tp: int, fp: int, fn: int) -> tuple[float, float, float, list[str]]:
    notes = []
    if tp + fp > 0:
        precision = 100.0 * tp / (tp + fp)
    else:
        precision = 0.0
        notes.append("precision undefined (no system activity); reported as 0")
    if tp + fn > 0:
        recall = 100.0 * tp / (tp + fn)
    else:
        recall = 0.0
        notes.append("recall undefined (no reference activity); reported as 0")
    if precision + recall > 0:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        notes.append("f1 undefined; reported as 0")
    return precision, recall, f1, notes


@dataclass(frozen=True)
class TagMetricsReport:
    """Micro P/R/F over (segment, class) presence decisions."""

    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    notes: tuple[str, ...] = ()


def tag_prf(
    system: Mapping[SegmentKey, Iterable[str]],
    reference: Mapping[SegmentKey, Iterable[str]],
) -> TagMetricsReport:
    """Compare system tag sets with reference tag sets segment by segment."""
    if set(system) != set(reference):
        missing = set(reference) ^ set(system)
        raise ValueError(f"system and reference segment sets differ on {len(missing)} segments")
    tp = fp = fn = 0
    for key, ref_tags in reference.items():
        ref = set(ref_tags)
        sys_ = set(system[key])
        tp += len(ref & sys_)
        fp += len(sys_ - ref)
        fn += len(ref - sys_)
    precision, recall, f1, notes = _prf_percent(tp, fp, fn)
    return TagMetricsReport(
        precision=precision, recall=recall, f1=f1, tp=tp, fp=fp, fn=fn, notes=tuple(notes)
    )


@dataclass(frozen=True)
class SegmentMetricsReport:
    """Segment-based detection scores: ER decomposition plus micro P/R/F."""

    error_rate: float
    substitution_rate: float
    deletion_rate: float
    insertion_rate: float
    f1: float
    precision: float
    recall: float
    segment_length: float
    n_reference: int
    tp: int
    fp: int
    fn: int
    substitutions: int
    deletions: int
    insertions: int
    notes: tuple[str, ...] = ()


def segment_metrics(
    reference: Iterable[EventInstance],
    system: Iterable[EventInstance],
    durations: Mapping[str, float] | None = None,
    segment_length: float = 1.0,
    classes: Sequence[str] | None = None,
) -> SegmentMetricsReport:
    """Segment-based error rate and F-score on a fixed grid.

    Both event lists are quantized onto segments of `segment_length` with the
    any-overlap rule; per segment the class-count confusions decompose into
    substitutions (paired miss+false alarm), deletions and insertions. The
    error rate normalizes by total reference activity; with zero reference
    activity it is undefined and reported as NaN with a note.
    """
    ref_by_file = events_by_file(reference)
    sys_by_file = events_by_file(system)
    all_events = [ev for evs in ref_by_file.values() for ev in evs]
    all_events += [ev for evs in sys_by_file.values() for ev in evs]
    durations = durations_from_events(all_events, minimum=durations)
    if classes is None:
        classes = tuple(sorted({ev.class_id for ev in all_events}))
    tp = fp = fn = subs = dels = ins = 0
    for file_id, duration in sorted(durations.items()):
        ref_grid = quantize_events_to_frames(
            ref_by_file.get(file_id, []), duration, segment_length, classes, file_id
        ).grid
        sys_grid = quantize_events_to_frames(
            sys_by_file.get(file_id, []), duration, segment_length, classes, file_id
        ).grid
        tp_k = (ref_grid & sys_grid).sum(axis=0)
        fn_k = (ref_grid & ~sys_grid).sum(axis=0)
        fp_k = (~ref_grid & sys_grid).sum(axis=0)
        s_k = np.minimum(fn_k, fp_k)
        tp += int(tp_k.sum())
        fn += int(fn_k.sum())
        fp += int(fp_k.sum())
        subs += int(s_k.sum())
        dels += int((fn_k - s_k).sum())
        ins += int((fp_k - s_k).sum())
    n_reference = tp + fn
    notes: list[str] = []
    if n_reference > 0:
        s_rate = subs / n_reference
        d_rate = dels / n_reference
        i_rate = ins / n_reference
        error_rate = (subs + dels + ins) / n_reference
    else:
        s_rate = d_rate = i_rate = error_rate = float("nan")
        notes.append("error rate undefined: reference contains no activity")
    precision, recall, f1, prf_notes = _prf_percent(tp, fp, fn)
    notes.extend(prf_notes)
    return SegmentMetricsReport(
        error_rate=error_rate,
        substitution_rate=s_rate,
        deletion_rate=d_rate,
        insertion_rate=i_rate,
        f1=f1,
        precision=precision,
        recall=recall,
        segment_length=segment_length,
        n_reference=n_reference,
        tp=tp,
        fp=fp,
        fn=fn,
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class IntersectionConfig:
    """Detection tolerance (dtc) and ground-truth coverage (gtc) thresholds."""

    dtc: float = 0.7
    gtc: float = 0.7

    def __post_init__(self) -> None:
        check_unit_interval(self.dtc, "dtc")
        check_unit_interval(self.gtc, "gtc")


@dataclass(frozen=True)
class IntersectionReport:
    """Intersection-based event F1; micro is the headline number."""

    f1: float
    tp: int
    fp: int
    fn: int
    macro_f1: float
    per_class: Mapping[str, tuple[float, int, int, int]]
    config: IntersectionConfig
    notes: tuple[str, ...] = ()


def intersection_f1(
    reference: Iterable[EventInstance],
    system: Iterable[EventInstance],
    config: IntersectionConfig = IntersectionConfig(),
) -> IntersectionReport:
    """Event-level F1 under intersection criteria.

    Per class: a detection is valid iff the fraction of its duration
    intersecting same-class reference events reaches `dtc`; invalid
    detections are false positives. A reference event is a true positive iff
    valid detections cover at least a `gtc` fraction of it, otherwise a false
    negative. Counts are micro-aggregated across classes and files; per-class
    F1 and their mean (macro) are also reported.
    """
    ref_groups: dict[tuple[str, str], list[EventInstance]] = {}
    sys_groups: dict[tuple[str, str], list[EventInstance]] = {}
    for ev in reference:
        ref_groups.setdefault((ev.file_id, ev.class_id), []).append(ev)
    for ev in system:
        sys_groups.setdefault((ev.file_id, ev.class_id), []).append(ev)
    class_counts: dict[str, list[int]] = {}
    for file_id, class_id in sorted(set(ref_groups) | set(sys_groups)):
        refs = ref_groups.get((file_id, class_id), [])
        dets = sys_groups.get((file_id, class_id), [])
        valid: list[EventInstance] = []
        fp = 0
        for det in dets:
            covered = sum(overlap(det.onset, det.offset, r.onset, r.offset) for r in refs)
            if covered / det.duration >= config.dtc:
                valid.append(det)
            else:
                fp += 1
        tp = fn = 0
        for r in refs:
            covered = sum(overlap(r.onset, r.offset, d.onset, d.offset) for d in valid)
            if covered / r.duration >= config.gtc:
                tp += 1
            else:
                fn += 1
        bucket = class_counts.setdefault(class_id, [0, 0, 0])
        bucket[0] += tp
        bucket[1] += fp
        bucket[2] += fn
    total_tp = sum(c[0] for c in class_counts.values())
    total_fp = sum(c[1] for c in class_counts.values())
    total_fn = sum(c[2] for c in class_counts.values())
    notes: list[str] = []
    denom = 2 * total_tp + total_fp + total_fn
    if denom > 0:
        micro = 100.0 * 2 * total_tp / denom
    else:
        micro = 0.0
        notes.append("f1 undefined (no events); reported as 0")
    per_class = {}
    for class_id in sorted(class_counts):
        tp, fp, fn = class_counts[class_id]
        d = 2 * tp + fp + fn
        per_class[class_id] = (100.0 * 2 * tp / d if d > 0 else 0.0, tp, fp, fn)
    macro = (
        float(np.mean([v[0] for v in per_class.values()])) if per_class else 0.0
    )
    return IntersectionReport(
        f1=micro,
        tp=total_tp,
        fp=total_fp,
        fn=total_fn,
        macro_f1=macro,
        per_class=per_class,
        config=config,
        notes=tuple(notes),
    )


@dataclass(frozen=True)
class AgreementReport:
    """Krippendorff's alpha (nominal data) with its disagreement terms."""

    alpha: float
    observed_disagreement: float
    expected_disagreement: float
    n_items: int
    n_opinions: int
    degenerate: bool = False


def krippendorff_alpha(table: BinaryOpinionTable) -> AgreementReport:
    """Chance-corrected agreement over the binary opinion table.

    Built from the coincidence matrix: each item with m >= 2 opinions
    contributes its ordered value pairs weighted by 1/(m - 1). Observed
    disagreement is the off-diagonal coincidence mass over n; expected
    disagreement comes from the value marginals with the n-1 correction.
    Items with fewer than two opinions are ignored; if every pairable opinion
    agrees the data are degenerate and alpha is reported as 1.
    """
    m = np.bincount(table.item_index, minlength=table.n_items).astype(float)
    yes = np.bincount(
        table.item_index, weights=table.answers.astype(float), minlength=table.n_items
    )
    pairable = m >= 2
    if not pairable.any():
        raise ValueError("alpha needs at least one item with two or more opinions")
    m = m[pairable]
    yes = yes[pairable]
    no = m - yes
    n = float(m.sum())
    off_diagonal = float((2.0 * yes * no / (m - 1.0)).sum())
    observed = off_diagonal / n
    n_yes = float(yes.sum())
    n_no = float(no.sum())
    expected = 2.0 * n_yes * n_no / (n * (n - 1.0))
    if expected == 0.0:
        return AgreementReport(
            alpha=1.0,
            observed_disagreement=observed,
            expected_disagreement=expected,
            n_items=int(pairable.sum()),
            n_opinions=int(n),
            degenerate=True,
        )
    return AgreementReport(
        alpha=1.0 - observed / expected,
        observed_disagreement=observed,
        expected_disagreement=expected,
        n_items=int(pairable.sum()),
        n_opinions=int(n),
    )
