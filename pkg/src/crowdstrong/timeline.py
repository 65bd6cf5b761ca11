"""Interval and frame algebra for event timelines.

Strong labels are half-open intervals [onset, offset) on a per-file timeline.
This module provides the shared primitives: quantizing event lists onto a
fixed frame grid, extracting events back out of frame activity, slicing a
file into overlapping annotation segments, and deriving the oracle weak label
(tag set) of a segment.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .validation import check_positive, check_vocabulary

DEFAULT_SEGMENT_LENGTH = 10
DEFAULT_SEGMENT_HOP = 1
DEFAULT_FRAME_LENGTH = 1.0


@dataclass(frozen=True, order=True)
class EventInstance:
    """One strong label: a class active on [onset, offset) within a file.

    `salience` is an optional perceptibility score in [0, 1] attached by the
    soundscape generator; it only matters to the annotator simulator.
    """

    file_id: str
    class_id: str
    onset: float
    offset: float
    salience: float | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.onset < 0:
            raise ValueError(f"onset must be non-negative, got {self.onset}")
        if self.offset <= self.onset:
            raise ValueError(
                f"offset must exceed onset, got [{self.onset}, {self.offset})"
            )
        if self.salience is not None and not 0.0 <= self.salience <= 1.0:
            raise ValueError(f"salience must be in [0, 1], got {self.salience}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass(frozen=True, order=True)
class SegmentSpec:
    """One annotation window: [start, start + length) of a file, integer grid."""

    file_id: str
    start: int
    length: int = DEFAULT_SEGMENT_LENGTH

    def __post_init__(self) -> None:
        if self.start < 0:
            raise ValueError(f"segment start must be non-negative, got {self.start}")
        if self.length <= 0:
            raise ValueError(f"segment length must be positive, got {self.length}")

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class FrameActivity:
    """Per-class boolean activity over a fixed frame grid.

    `grid` has shape (n_classes, n_frames); frame t covers
    [t * frame_len, (t + 1) * frame_len).
    """

    file_id: str
    classes: tuple[str, ...]
    grid: np.ndarray
    frame_len: float = DEFAULT_FRAME_LENGTH

    def __post_init__(self) -> None:
        if self.grid.ndim != 2 or self.grid.shape[0] != len(self.classes):
            raise ValueError(
                f"grid shape {self.grid.shape} does not match {len(self.classes)} classes"
            )
        if self.grid.dtype != np.bool_:
            raise ValueError("grid must be boolean")

    @property
    def n_frames(self) -> int:
        return int(self.grid.shape[1])

    def active_frames(self, class_id: str) -> np.ndarray:
        """Indices of active frames for one class."""
        return np.flatnonzero(self.grid[self.classes.index(class_id)])


def overlap(a_start: float, a_end: float, b_start: float, b_end: float) -> float:
    """Length of the intersection of two half-open intervals."""
    return max(0.0, min(a_end, b_end) - max(a_start, b_start))


def validate_events(events: Iterable[EventInstance], duration: float | None = None) -> list[EventInstance]:
    """Check the event-list invariants; returns the events as a list.

    Raises ValueError on an event exceeding `duration` or on two same-class
    events of one file overlapping in time.
    """
    events = list(events)
    if duration is not None:
        for ev in events:
            if ev.offset > duration + 1e-9:
                raise ValueError(
                    f"event {ev.class_id} [{ev.onset}, {ev.offset}) exceeds file duration {duration}"
                )
    by_key: dict[tuple[str, str], list[EventInstance]] = {}
    for ev in events:
        by_key.setdefault((ev.file_id, ev.class_id), []).append(ev)
    for (file_id, class_id), group in by_key.items():
        group.sort(key=lambda e: e.onset)
        for prev, cur in zip(group, group[1:]):
            if cur.onset < prev.offset:
                raise ValueError(
                    f"overlapping {class_id} events in {file_id}: "
                    f"[{prev.onset}, {prev.offset}) and [{cur.onset}, {cur.offset})"
                )
    return events


def frame_span(onset: float, offset: float, frame_len: float) -> tuple[int, int]:
    """First and one-past-last frame index with nonzero overlap of [onset, offset)."""
    first = math.floor(onset / frame_len)
    # a frame starting exactly at `offset` does not overlap (half-open)
    last = math.ceil(offset / frame_len)
    return first, last


def quantize_events_to_frames(
    events: Iterable[EventInstance],
    duration: float,
    frame_len: float = DEFAULT_FRAME_LENGTH,
    classes: Sequence[str] | None = None,
    file_id: str | None = None,
) -> FrameActivity:
    """Mark frame t active for class c iff some c-event overlaps frame t.

    Any nonzero overlap with [t * frame_len, (t + 1) * frame_len) activates
    the frame. The grid has floor(duration / frame_len) frames.
    """
    check_positive(frame_len, "frame_len")
    events = validate_events(events, duration)
    if file_id is None:
        file_ids = {ev.file_id for ev in events}
        if len(file_ids) > 1:
            raise ValueError(f"events from multiple files: {sorted(file_ids)}")
        file_id = file_ids.pop() if file_ids else ""
    if classes is None:
        vocab = tuple(sorted({ev.class_id for ev in events}))
    else:
        vocab = check_vocabulary(classes)
    n_frames = int(math.floor(duration / frame_len + 1e-9))
    grid = np.zeros((len(vocab), n_frames), dtype=bool)
    index = {c: i for i, c in enumerate(vocab)}
    for ev in events:
        if ev.class_id not in index:
            raise ValueError(f"event class {ev.class_id!r} not in vocabulary {vocab}")
        first, last = frame_span(ev.onset, ev.offset, frame_len)
        grid[index[ev.class_id], max(first, 0) : min(last, n_frames)] = True
    return FrameActivity(file_id=file_id, classes=vocab, grid=grid, frame_len=frame_len)


def extract_events_from_frames(activity: FrameActivity) -> list[EventInstance]:
    """Turn each maximal run of active frames into one event.

    Inverse of quantization on frame-aligned event lists: onset/offset are the
    run boundaries in seconds.
    """
    events: list[EventInstance] = []
    fl = activity.frame_len
    for ci, class_id in enumerate(activity.classes):
        row = activity.grid[ci]
        if not row.any():
            continue
        padded = np.concatenate(([False], row, [False]))
        edges = np.diff(padded.astype(np.int8))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        for s, e in zip(starts, ends):
            events.append(
                EventInstance(
                    file_id=activity.file_id,
                    class_id=class_id,
                    onset=float(s * fl),
                    offset=float(e * fl),
                )
            )
    events.sort(key=lambda ev: (ev.class_id, ev.onset))
    return events


def segment_timeline(
    file_id: str,
    duration: float,
    length: int = DEFAULT_SEGMENT_LENGTH,
    hop: int = DEFAULT_SEGMENT_HOP,
) -> list[SegmentSpec]:
    """All full-length annotation windows of a file.

    Starts are 0, hop, 2*hop, ... up to duration - length inclusive, so the
    count is floor((duration - length) / hop) + 1. A file shorter than one
    window yields no segments.
    """
    if length <= 0 or hop <= 0:
        raise ValueError("length and hop must be positive integers")
    if duration < length:
        return []
    last = int(math.floor((duration - length) / hop + 1e-9)) * hop
    return [
        SegmentSpec(file_id=file_id, start=start, length=length)
        for start in range(0, last + 1, hop)
    ]


def covering_segment_starts(
    frame: int,
    duration: float,
    length: int = DEFAULT_SEGMENT_LENGTH,
    hop: int = DEFAULT_SEGMENT_HOP,
) -> range:
    """Starts of the segments whose window contains frame [frame, frame + 1).

    Interior frames (length - 1 <= t <= last start) are covered by exactly
    length / hop segments.
    """
    if duration < length:
        return range(0)
    last_start = int(math.floor((duration - length) / hop + 1e-9)) * hop
    low = max(0, frame - length + 1)
    low = ((low + hop - 1) // hop) * hop  # round up to the hop grid
    high = min(frame, last_start)
    return range(low, high + 1, hop)


def segment_ground_truth_tags(
    events: Iterable[EventInstance],
    segment: SegmentSpec,
    min_overlap: float = 0.0,
) -> frozenset[str]:
    """Oracle weak label of a segment: classes whose events overlap the window.

    A class is tagged iff some event of that class overlaps
    [start, start + length) by strictly more than `min_overlap` seconds.
    """
    tags = set()
    for ev in events:
        if ev.file_id != segment.file_id:
            continue
        if overlap(ev.onset, ev.offset, segment.start, segment.end) > min_overlap:
            tags.add(ev.class_id)
    return frozenset(tags)


def events_by_file(events: Iterable[EventInstance]) -> dict[str, list[EventInstance]]:
    """Group an event list by file id, preserving order within each file."""
    grouped: dict[str, list[EventInstance]] = {}
    for ev in events:
        grouped.setdefault(ev.file_id, []).append(ev)
    return grouped


def max_polyphony(events: Iterable[EventInstance]) -> int:
    """Largest number of simultaneously active events, via a sweep line."""
    points: list[tuple[float, int]] = []
    for ev in events:
        points.append((ev.onset, 1))
        points.append((ev.offset, -1))
    # offsets close before onsets open at the same instant (half-open intervals)
    points.sort(key=lambda p: (p[0], p[1]))
    best = 0
    active = 0
    for _, delta in points:
        active += delta
        best = max(best, active)
    return best


def durations_from_events(
    events: Iterable[EventInstance], minimum: Mapping[str, float] | None = None
) -> dict[str, float]:
    """Smallest whole-second duration covering each file's events."""
    out: dict[str, float] = dict(minimum or {})
    for ev in events:
        need = float(math.ceil(ev.offset))
        if need > out.get(ev.file_id, 0.0):
            out[ev.file_id] = need
    return out
