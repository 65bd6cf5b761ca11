"""Crowd-worker behavioral model and campaign simulator.

A worker either answers from perception ("trusting", probability = trust) or
spams with a per-class yes bias, per class and segment independently. In the
trusting branch a truly present class can still be missed, with a miss
probability that grows as the event's salience drops; an absent class is
tagged with a small false-alarm probability. Spamming ignores the audio
entirely, which is exactly the structure the competence estimator assumes.
"""

from __future__ import annotations

import csv
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import eventio
from .rng import substream
from .timeline import (
    EventInstance,
    SegmentSpec,
    overlap,
    segment_ground_truth_tags,
)
from .validation import check_probability, check_vocabulary

# calibrated so that the simulated campaign reproduces the qualitative
# regime of real crowds: recall union > estimated tags > majority, precision
# the other way around, agreement rising after competence filtering
DEFAULT_MISS_PROB = 0.05
DEFAULT_SALIENCE_SLOPE = 0.3
DEFAULT_FALSE_ALARM_PROB = 0.01
HONEST_SPAM_YES_RANGE = (0.0, 0.2)
SPAMMER_SPAM_YES_RANGE = (0.2, 0.8)


@dataclass
class WorkerProfile:
    """Behavioral parameters of one simulated worker."""

    worker_id: str
    trust: float
    spam_yes: dict[str, float]
    miss_prob: float = DEFAULT_MISS_PROB
    salience_slope: float = DEFAULT_SALIENCE_SLOPE
    false_alarm_prob: float = DEFAULT_FALSE_ALARM_PROB
    subpopulation: str = ""

    def __post_init__(self) -> None:
        check_probability(self.trust, "trust")
        check_probability(self.miss_prob, "miss_prob")
        check_probability(self.false_alarm_prob, "false_alarm_prob")
        if self.salience_slope < 0:
            raise ValueError(f"salience_slope must be >= 0, got {self.salience_slope}")
        for class_id, p in self.spam_yes.items():
            check_probability(p, f"spam_yes[{class_id}]")


@dataclass(frozen=True)
class SegmentAnnotation:
    """One worker's weak-label answer for one segment.

    An empty tag set encodes "none of the above"; absence of a class is an
    explicit "no" opinion once decomposed into binary items.
    """

    worker_id: str
    segment: SegmentSpec
    tags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class Subpopulation:
    """A named slice of the worker pool with its own parameter ranges."""

    name: str
    fraction: float
    trust_range: tuple[float, float]
    spam_yes_range: tuple[float, float] = (0.2, 0.8)
    miss_prob: float = DEFAULT_MISS_PROB
    salience_slope: float = DEFAULT_SALIENCE_SLOPE
    false_alarm_prob: float = DEFAULT_FALSE_ALARM_PROB


def default_population() -> tuple[Subpopulation, ...]:
    """Mixed pool: mostly competent workers plus a spammer minority.

    Honest workers rarely volunteer spurious tags (their failure mode is
    missing sounds); spammers answer without listening, with arbitrary
    per-class yes biases.
    """
    return (
        Subpopulation("diligent", 0.4, (0.85, 1.0), HONEST_SPAM_YES_RANGE),
        Subpopulation("average", 0.5, (0.5, 0.85), HONEST_SPAM_YES_RANGE),
        Subpopulation("spammer", 0.1, (0.0, 0.15), SPAMMER_SPAM_YES_RANGE),
    )


def sample_worker_pool(
    n: int,
    mix: Sequence[Subpopulation],
    vocabulary: Sequence[str],
    rng: np.random.Generator | None = None,
) -> list[WorkerProfile]:
    """Draw `n` workers, each from a subpopulation chosen by its fraction."""
    vocab = check_vocabulary(vocabulary)
    fractions = np.array([sub.fraction for sub in mix], dtype=float)
    if len(fractions) == 0 or abs(fractions.sum() - 1.0) > 1e-9 or (fractions < 0).any():
        raise ValueError(f"subpopulation fractions must be non-negative and sum to 1, got {fractions}")
    if rng is None:
        rng = substream(0, "worker-pool")
    pool = []
    for i in range(n):
        sub = mix[int(rng.choice(len(mix), p=fractions))]
        trust = float(rng.uniform(*sub.trust_range))
        spam_yes = {c: float(rng.uniform(*sub.spam_yes_range)) for c in vocab}
        pool.append(
            WorkerProfile(
                worker_id=f"w{i:04d}",
                trust=trust,
                spam_yes=spam_yes,
                miss_prob=sub.miss_prob,
                salience_slope=sub.salience_slope,
                false_alarm_prob=sub.false_alarm_prob,
                subpopulation=sub.name,
            )
        )
    return pool


def perfect_worker(worker_id: str, vocabulary: Sequence[str]) -> WorkerProfile:
    """A worker that always answers from perception and never errs."""
    return WorkerProfile(
        worker_id=worker_id,
        trust=1.0,
        spam_yes={c: 0.0 for c in vocabulary},
        miss_prob=0.0,
        salience_slope=0.0,
        false_alarm_prob=0.0,
        subpopulation="perfect",
    )


def segment_salience(
    events: Iterable[EventInstance], segment: SegmentSpec
) -> dict[str, float]:
    """Overlap-weighted mean salience of each class's events in the window.

    Events without a salience score count as fully salient.
    """
    weight: dict[str, float] = {}
    total: dict[str, float] = {}
    for ev in events:
        if ev.file_id != segment.file_id:
            continue
        w = overlap(ev.onset, ev.offset, segment.start, segment.end)
        if w <= 0:
            continue
        s = 1.0 if ev.salience is None else ev.salience
        weight[ev.class_id] = weight.get(ev.class_id, 0.0) + w * s
        total[ev.class_id] = total.get(ev.class_id, 0.0) + w
    return {c: weight[c] / total[c] for c in weight}


def _yes_probabilities(
    profiles: Sequence[WorkerProfile],
    vocabulary: tuple[str, ...],
    truth_tags: frozenset[str],
    salience: Mapping[str, float],
) -> tuple[np.ndarray, np.ndarray]:
    """Per (worker, class): spam probability and yes probability in each branch.

    Returns (spam_prob, spam_yes, trust_yes) stacked as arrays used by the
    samplers below.
    """
    n_w, n_c = len(profiles), len(vocabulary)
    spam_yes = np.empty((n_w, n_c))
    trust_yes = np.empty((n_w, n_c))
    truth = np.array([c in truth_tags for c in vocabulary])
    sal = np.array([salience.get(c, 1.0) for c in vocabulary])
    for wi, prof in enumerate(profiles):
        spam_yes[wi] = [prof.spam_yes[c] for c in vocabulary]
        miss = np.minimum(1.0, prof.miss_prob + prof.salience_slope * (1.0 - sal))
        trust_yes[wi] = np.where(truth, 1.0 - miss, prof.false_alarm_prob)
    return spam_yes, trust_yes


def _annotate_block(
    profiles: Sequence[WorkerProfile],
    vocabulary: tuple[str, ...],
    truth_tags: frozenset[str],
    salience: Mapping[str, float],
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample the (worker, class) yes/no matrix for one segment."""
    spam_yes, trust_yes = _yes_probabilities(profiles, vocabulary, truth_tags, salience)
    trust = np.array([p.trust for p in profiles])[:, None]
    spamming = rng.random(spam_yes.shape) >= trust
    yes_prob = np.where(spamming, spam_yes, trust_yes)
    return rng.random(spam_yes.shape) < yes_prob


def annotate(
    worker: WorkerProfile,
    segment: SegmentSpec,
    truth_tags: frozenset[str] | set[str],
    salience: Mapping[str, float],
    rng: np.random.Generator,
    vocabulary: Sequence[str],
) -> SegmentAnnotation:
    """One worker answers one segment; every class decided independently."""
    vocab = check_vocabulary(vocabulary)
    answers = _annotate_block([worker], vocab, frozenset(truth_tags), salience, rng)[0]
    tags = frozenset(c for c, yes in zip(vocab, answers) if yes)
    return SegmentAnnotation(worker_id=worker.worker_id, segment=segment, tags=tags)


def simulate_campaign(
    hits: Sequence,
    pool: Sequence[WorkerProfile],
    events: Iterable[EventInstance],
    vocabulary: Sequence[str],
    seed: int = 0,
) -> list[SegmentAnnotation]:
    """Answer every hit with its assigned workers.

    Each hit draws from its own substream keyed by (file, start), so the
    result does not depend on hit order and distinct hits can be simulated
    in parallel.
    """
    vocab = check_vocabulary(vocabulary)
    profiles = {p.worker_id: p for p in pool}
    by_file: dict[str, list[EventInstance]] = {}
    for ev in events:
        by_file.setdefault(ev.file_id, []).append(ev)
    annotations: list[SegmentAnnotation] = []
    for hit in hits:
        seg = hit.segment
        file_events = by_file.get(seg.file_id, [])
        truth = segment_ground_truth_tags(file_events, seg)
        salience = segment_salience(file_events, seg)
        rng = substream(seed, "annotate", seg.file_id, str(seg.start))
        hit_profiles = [profiles[w] for w in hit.workers]
        answers = _annotate_block(hit_profiles, vocab, truth, salience, rng)
        for prof, row in zip(hit_profiles, answers):
            tags = frozenset(c for c, yes in zip(vocab, row) if yes)
            annotations.append(
                SegmentAnnotation(worker_id=prof.worker_id, segment=seg, tags=tags)
            )
    annotations.sort(key=lambda a: (a.segment.file_id, a.segment.start, a.worker_id))
    return annotations


# ---------------------------------------------------------------------------
# serialization


def write_annotations_jsonl(
    path: str | os.PathLike[str],
    annotations: Iterable[SegmentAnnotation],
    header: Mapping[str, object] | None = None,
) -> None:
    records = [
        {
            "worker": a.worker_id,
            "file": a.segment.file_id,
            "start": a.segment.start,
            "labels": sorted(a.tags),
        }
        for a in annotations
    ]
    eventio.write_jsonl_records(path, records, header=header)


def read_annotations_jsonl(
    path: str | os.PathLike[str], segment_length: int = 10
) -> list[SegmentAnnotation]:
    annotations = []
    for record in eventio.read_jsonl_records(path):
        segment = SegmentSpec(
            file_id=str(record["file"]),
            start=int(record["start"]),
            length=segment_length,
        )
        annotations.append(
            SegmentAnnotation(
                worker_id=str(record["worker"]),
                segment=segment,
                tags=frozenset(str(t) for t in record["labels"]),
            )
        )
    return annotations


@dataclass(frozen=True)
class ColumnMapping:
    """How to read a foreign CSV annotation table."""

    worker: str = "worker"
    file: str = "file"
    start: str = "start"
    labels: str = "labels"
    label_separator: str = "|"
    segment_length: int = 10

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str]) -> "ColumnMapping":
        known = {f: mapping[f] for f in ("worker", "file", "start", "labels") if f in mapping}
        extra = {}
        if "label_separator" in mapping:
            extra["label_separator"] = str(mapping["label_separator"])
        if "segment_length" in mapping:
            extra["segment_length"] = int(mapping["segment_length"])
        return cls(**known, **extra)


def ingest_annotations_csv(
    path: str | os.PathLike[str], mapping: ColumnMapping | Mapping[str, str] | None = None
) -> list[SegmentAnnotation]:
    """Read real (non-simulated) campaign data from a CSV table."""
    if mapping is None:
        mapping = ColumnMapping()
    elif not isinstance(mapping, ColumnMapping):
        mapping = ColumnMapping.from_mapping(mapping)
    annotations = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValueError(f"{path}: empty CSV")
        for col in (mapping.worker, mapping.file, mapping.start, mapping.labels):
            if col not in reader.fieldnames:
                raise ValueError(f"{path}: missing column {col!r} (have {reader.fieldnames})")
        for row in reader:
            raw = (row[mapping.labels] or "").strip()
            tags = frozenset(t.strip() for t in raw.split(mapping.label_separator) if t.strip())
            segment = SegmentSpec(
                file_id=row[mapping.file],
                start=int(float(row[mapping.start])),
                length=mapping.segment_length,
            )
            annotations.append(
                SegmentAnnotation(worker_id=row[mapping.worker], segment=segment, tags=tags)
            )
    return annotations


def write_pool_jsonl(
    path: str | os.PathLike[str],
    pool: Iterable[WorkerProfile],
    header: Mapping[str, object] | None = None,
) -> None:
    records = [
        {
            "worker": p.worker_id,
            "subpopulation": p.subpopulation,
            "trust": round(p.trust, 6),
            "spam_yes": {c: round(v, 6) for c, v in sorted(p.spam_yes.items())},
            "miss_prob": p.miss_prob,
            "salience_slope": p.salience_slope,
            "false_alarm_prob": p.false_alarm_prob,
        }
        for p in pool
    ]
    eventio.write_jsonl_records(path, records, header=header)


def read_pool_jsonl(path: str | os.PathLike[str]) -> list[WorkerProfile]:
    pool = []
    for record in eventio.read_jsonl_records(path):
        pool.append(
            WorkerProfile(
                worker_id=str(record["worker"]),
                trust=float(record["trust"]),
                spam_yes={str(c): float(v) for c, v in record["spam_yes"].items()},
                miss_prob=float(record["miss_prob"]),
                salience_slope=float(record["salience_slope"]),
                false_alarm_prob=float(record["false_alarm_prob"]),
                subpopulation=str(record.get("subpopulation", "")),
            )
        )
    return pool
