"""Weak labels to strong labels.

Baseline per-segment aggregators (strict majority, union) plus the temporal
pipeline: stack the tag opinions of all windows covering each frame into
active/available counts, binarize with a proportional threshold, and extract
events from the active runs. Three opinion sources are supported: every
annotation, annotations of competent workers only, or one estimated tag set
per segment.
"""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from typing import Literal

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .mace import (
    BinaryOpinionTable,
    MaceCompetence,
    SegmentKey,
    build_binary_instances,
)
from .timeline import EventInstance, FrameActivity, SegmentSpec, extract_events_from_frames
from .validation import check_unit_interval, check_vocabulary
from .workers import SegmentAnnotation

ModeKind = Literal["all", "filtered", "mace"]
MODE_KINDS = ("all", "filtered", "mace")

DEFAULT_TAU = 0.8
DEFAULT_COMPETENCE_THRESHOLD = 0.6

# integer counts compared against tau * available: absorb float rounding of
# products like 0.8 * 10 without changing any non-boundary decision
_RATIO_EPS = 1e-9


@dataclass(frozen=True)
class AggregationMode:
    """Which opinions feed the temporal stack, and the binarization threshold."""

    kind: ModeKind = "mace"
    competence_threshold: float = DEFAULT_COMPETENCE_THRESHOLD
    tau: float = DEFAULT_TAU

    def __post_init__(self) -> None:
        if self.kind not in MODE_KINDS:
            raise ValueError(f"mode kind must be one of {MODE_KINDS}, got {self.kind!r}")
        check_unit_interval(self.tau, "tau")
        check_unit_interval(self.competence_threshold, "competence_threshold", closed_low=True)


@dataclass(frozen=True)
class FrameOpinionCounts:
    """Per-frame, per-class counts of active vs. available opinions.

    Every opinion covers the full class vocabulary (absence is an explicit
    no), so availability is shared across classes: shape (n_frames,), while
    `active` is (n_classes, n_frames).
    """

    file_id: str
    classes: tuple[str, ...]
    active: np.ndarray
    available: np.ndarray
    frame_len: float = 1.0

    def __post_init__(self) -> None:
        if self.active.shape != (len(self.classes), self.available.shape[0]):
            raise ValueError(
                f"active shape {self.active.shape} does not match "
                f"{len(self.classes)} classes x {self.available.shape[0]} frames"
            )
        if (self.active > self.available[None, :]).any():
            raise ValueError("active opinions exceed available opinions")

    @property
    def n_frames(self) -> int:
        return int(self.available.shape[0])


def majority_tags(annotations: Sequence[SegmentAnnotation]) -> frozenset[str]:
    """Classes tagged by strictly more than half of the segment's annotators."""
    if not annotations:
        raise ValueError("majority vote needs at least one annotation")
    _require_single_segment(annotations)
    counts = Counter(tag for ann in annotations for tag in ann.tags)
    quorum = len(annotations) / 2.0
    return frozenset(tag for tag, c in counts.items() if c > quorum)


def union_tags(annotations: Sequence[SegmentAnnotation]) -> frozenset[str]:
    """Classes tagged by any annotator of the segment."""
    _require_single_segment(annotations)
    tags: set[str] = set()
    for ann in annotations:
        tags.update(ann.tags)
    return frozenset(tags)


def _require_single_segment(annotations: Sequence[SegmentAnnotation]) -> None:
    keys = {(a.segment.file_id, a.segment.start) for a in annotations}
    if len(keys) > 1:
        raise ValueError(f"annotations span multiple segments: {sorted(keys)}")


def group_by_segment(
    annotations: Iterable[SegmentAnnotation],
) -> dict[SegmentKey, list[SegmentAnnotation]]:
    grouped: dict[SegmentKey, list[SegmentAnnotation]] = {}
    for ann in annotations:
        grouped.setdefault((ann.segment.file_id, ann.segment.start), []).append(ann)
    return grouped


def segment_tags_by_rule(
    annotations: Iterable[SegmentAnnotation], rule: Literal["majority", "union"]
) -> dict[SegmentKey, frozenset[str]]:
    """Apply a per-segment baseline aggregator across a whole campaign."""
    vote = majority_tags if rule == "majority" else union_tags
    return {key: vote(group) for key, group in group_by_segment(annotations).items()}


def stack_opinions(
    opinions: Iterable[tuple[SegmentSpec, Iterable[str]]],
    duration: float,
    classes: Sequence[str],
    file_id: str,
    frame_len: float = 1.0,
) -> FrameOpinionCounts:
    """Count, per frame and class, how many covering opinions marked it active.

    One opinion is one (segment, tag set) pair; each opinion is available on
    every frame its window covers, so edge frames naturally see fewer
    opinions than interior frames.
    """
    vocab = check_vocabulary(classes)
    index = {c: i for i, c in enumerate(vocab)}
    n_frames = int(math.floor(duration / frame_len + 1e-9))
    active = np.zeros((len(vocab), n_frames), dtype=np.int64)
    available = np.zeros(n_frames, dtype=np.int64)
    for segment, tags in opinions:
        if segment.file_id != file_id:
            raise ValueError(
                f"opinion on segment of {segment.file_id!r} fed to stack for {file_id!r}"
            )
        lo = int(round(segment.start / frame_len))
        hi = int(round(segment.end / frame_len))
        if hi > n_frames:
            raise ValueError(
                f"segment {segment.file_id}:{segment.start} extends past duration {duration}"
            )
        available[lo:hi] += 1
        for tag in tags:
            if tag not in index:
                raise ValueError(f"tag {tag!r} not in vocabulary {vocab}")
            active[index[tag], lo:hi] += 1
    return FrameOpinionCounts(
        file_id=file_id, classes=vocab, active=active, available=available, frame_len=frame_len
    )


def binarize(counts: FrameOpinionCounts, tau: float = DEFAULT_TAU) -> FrameActivity:
    """Frame active iff at least a tau fraction of its available opinions agree.

    Frames without any available opinion stay inactive.
    """
    check_unit_interval(tau, "tau")
    threshold = tau * counts.available[None, :].astype(float)
    grid = (counts.available[None, :] > 0) & (counts.active >= threshold - _RATIO_EPS)
    return FrameActivity(
        file_id=counts.file_id,
        classes=counts.classes,
        grid=grid,
        frame_len=counts.frame_len,
    )


def _opinion_stream(
    mode: AggregationMode,
    annotations: Sequence[SegmentAnnotation],
    competence: Mapping[str, float] | None,
    mace_tags: Mapping[SegmentKey, frozenset[str]] | None,
    segment_length: int,
) -> list[tuple[SegmentSpec, frozenset[str]]]:
    if mode.kind == "mace":
        if mace_tags is None:
            raise ValueError("mode 'mace' needs predicted tags per segment")
        return [
            (SegmentSpec(file_id=f, start=s, length=segment_length), tags)
            for (f, s), tags in sorted(mace_tags.items())
        ]
    if mode.kind == "filtered":
        if competence is None:
            raise ValueError("mode 'filtered' needs per-worker competences")
        kept = []
        for ann in annotations:
            if ann.worker_id not in competence:
                raise ValueError(f"worker {ann.worker_id} has no estimated competence")
            if competence[ann.worker_id] > mode.competence_threshold:
                kept.append(ann)
        return [(ann.segment, ann.tags) for ann in kept]
    return [(ann.segment, ann.tags) for ann in annotations]


def estimate_strong_labels(
    annotations: Sequence[SegmentAnnotation],
    durations: Mapping[str, float],
    classes: Sequence[str],
    mode: AggregationMode,
    competence: Mapping[str, float] | None = None,
    mace_tags: Mapping[SegmentKey, frozenset[str]] | None = None,
    frame_len: float = 1.0,
) -> list[EventInstance]:
    """Full weak-to-strong chain: stack, binarize, extract, per file.

    `durations` must name every file to reconstruct (files without opinions
    yield no events).
    """
    segment_length = annotations[0].segment.length if annotations else 10
    opinions = _opinion_stream(mode, annotations, competence, mace_tags, segment_length)
    by_file: dict[str, list[tuple[SegmentSpec, frozenset[str]]]] = {}
    for segment, tags in opinions:
        if segment.file_id not in durations:
            raise ValueError(f"no duration known for file {segment.file_id!r}")
        by_file.setdefault(segment.file_id, []).append((segment, tags))
    events: list[EventInstance] = []
    for file_id in sorted(durations):
        counts = stack_opinions(
            by_file.get(file_id, []), durations[file_id], classes, file_id, frame_len
        )
        events.extend(extract_events_from_frames(binarize(counts, mode.tau)))
    events.sort(key=lambda ev: (ev.file_id, ev.class_id, ev.onset))
    return events


def frame_counts_by_file(
    annotations: Sequence[SegmentAnnotation],
    durations: Mapping[str, float],
    classes: Sequence[str],
    mode: AggregationMode,
    competence: Mapping[str, float] | None = None,
    mace_tags: Mapping[SegmentKey, frozenset[str]] | None = None,
    frame_len: float = 1.0,
) -> dict[str, FrameOpinionCounts]:
    """The stacked counts per file, before binarization (for inspection)."""
    segment_length = annotations[0].segment.length if annotations else 10
    opinions = _opinion_stream(mode, annotations, competence, mace_tags, segment_length)
    by_file: dict[str, list[tuple[SegmentSpec, frozenset[str]]]] = {}
    for segment, tags in opinions:
        by_file.setdefault(segment.file_id, []).append((segment, tags))
    return {
        file_id: stack_opinions(
            by_file.get(file_id, []), durations[file_id], classes, file_id, frame_len
        )
        for file_id in sorted(durations)
    }


@dataclass
class CampaignAnnotations:
    """Everything the strong-label estimator needs about one campaign."""

    annotations: list[SegmentAnnotation]
    durations: dict[str, float]
    vocabulary: tuple[str, ...]

    def opinion_table(self) -> BinaryOpinionTable:
        return build_binary_instances(self.annotations, self.vocabulary)


class StrongLabelEstimator(BaseEstimator):
    """Weak-to-strong transformer with a scikit-learn surface.

    For the competence-filtered and estimated-tags modes, `fit` runs the
    annotator-competence EM on the campaign's opinion table; `predict` (alias
    `transform`) then turns a campaign into a strong-label event list.
    """

    def __init__(
        self,
        mode: ModeKind = "mace",
        tau: float = DEFAULT_TAU,
        competence_threshold: float = DEFAULT_COMPETENCE_THRESHOLD,
        restarts: int = 10,
        iterations: int = 50,
        smoothing: float = 0.01,
        tol: float = 1e-6,
        label_prior_yes: float = 0.5,
        decision_threshold: float = 0.5,
        frame_len: float = 1.0,
        random_state: int = 0,
    ) -> None:
        self.mode = mode
        self.tau = tau
        self.competence_threshold = competence_threshold
        self.restarts = restarts
        self.iterations = iterations
        self.smoothing = smoothing
        self.tol = tol
        self.label_prior_yes = label_prior_yes
        self.decision_threshold = decision_threshold
        self.frame_len = frame_len
        self.random_state = random_state

    def _mode(self) -> AggregationMode:
        return AggregationMode(
            kind=self.mode, competence_threshold=self.competence_threshold, tau=self.tau
        )

    def fit(self, X: CampaignAnnotations, y=None) -> "StrongLabelEstimator":
        self._mode()  # validates parameters
        if self.mode in ("filtered", "mace"):
            self.mace_ = MaceCompetence(
                restarts=self.restarts,
                iterations=self.iterations,
                smoothing=self.smoothing,
                tol=self.tol,
                label_prior_yes=self.label_prior_yes,
                decision_threshold=self.decision_threshold,
                random_state=self.random_state,
            ).fit(X.opinion_table())
        else:
            self.mace_ = None
        self.is_fitted_ = True
        return self

    def predict(self, X: CampaignAnnotations) -> list[EventInstance]:
        check_is_fitted(self, "is_fitted_")
        competence = None
        mace_tags = None
        if self.mode == "filtered":
            competence = self.mace_.model_.competence_map()
        elif self.mode == "mace":
            mace_tags = self.mace_.predict(X.opinion_table())
        return estimate_strong_labels(
            X.annotations,
            X.durations,
            X.vocabulary,
            self._mode(),
            competence=competence,
            mace_tags=mace_tags,
            frame_len=self.frame_len,
        )

    def transform(self, X: CampaignAnnotations) -> list[EventInstance]:
        return self.predict(X)

    def fit_predict(self, X: CampaignAnnotations, y=None) -> list[EventInstance]:
        return self.fit(X).predict(X)
