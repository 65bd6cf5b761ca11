"""Synthetic ground-truth timelines.

Generates per-file event lists with controlled polyphony: a fixed number of
independent "tracks" each place events sequentially, separated by random
gaps, so instantaneous polyphony never exceeds the track count. Classes and
durations are drawn uniformly; a salience score in [0, 1] stands in for the
mixing SNR and only influences the annotator simulator's miss model.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import substream
from .timeline import EventInstance
from .validation import check_ordered_pair, check_vocabulary

DEFAULT_CLASSES = (
    "car_horn",
    "children_voices",
    "dog_bark",
    "engine_idling",
    "siren",
    "street_music",
)

CLASS_RESAMPLE_LIMIT = 100


class GenerationError(RuntimeError):
    """Raised when a soundscape cannot be generated under the given config."""


@dataclass(frozen=True)
class SoundscapeConfig:
    """Knobs for the timeline generator.

    `edge_margin` keeps the first/last seconds of each file event-free and
    `min_same_class_gap` enforces a minimum silence between events of one
    class; both default to 0, which reproduces the plain generator (only
    same-class overlap is forbidden).
    """

    n_files: int = 20
    duration: float = 180.0
    max_polyphony: int = 2
    gap_range: tuple[float, float] = (2.0, 10.0)
    classes: tuple[str, ...] = DEFAULT_CLASSES
    event_duration_range: tuple[float, float] = (1.0, 10.0)
    salience_range: tuple[float, float] = (0.0, 1.0)
    seed: int = 0
    edge_margin: float = 0.0
    min_same_class_gap: float = 0.0
    file_prefix: str = "soundscape"

    def __post_init__(self) -> None:
        if self.n_files < 0:
            raise ValueError(f"n_files must be non-negative, got {self.n_files}")
        if self.max_polyphony < 1:
            raise ValueError(f"max_polyphony must be >= 1, got {self.max_polyphony}")
        check_ordered_pair(self.gap_range, "gap_range", minimum=0.0)
        check_ordered_pair(self.event_duration_range, "event_duration_range", minimum=1e-9)
        low, high = check_ordered_pair(self.salience_range, "salience_range")
        if high > 1.0:
            raise ValueError(f"salience_range must stay within [0, 1], got {self.salience_range}")
        check_vocabulary(self.classes)
        if self.edge_margin < 0 or self.min_same_class_gap < 0:
            raise ValueError("edge_margin and min_same_class_gap must be non-negative")

    def file_ids(self) -> list[str]:
        return [f"{self.file_prefix}_{i:02d}" for i in range(self.n_files)]


def _conflicts(
    placed: list[EventInstance], class_id: str, onset: float, offset: float, gap: float
) -> bool:
    for ev in placed:
        if ev.class_id != class_id:
            continue
        if ev.onset < offset + gap and ev.offset > onset - gap:
            return True
    return False


def _generate_file(config: SoundscapeConfig, file_id: str, rng: np.random.Generator) -> list[EventInstance]:
    limit = config.duration - config.edge_margin
    placed: list[EventInstance] = []
    n_classes = len(config.classes)
    for _ in range(config.max_polyphony):
        cursor = config.edge_margin
        while True:
            gap = rng.uniform(*config.gap_range)
            onset = cursor + gap
            length = rng.uniform(*config.event_duration_range)
            offset = onset + length
            if offset > limit:
                break
            class_id = None
            for _ in range(CLASS_RESAMPLE_LIMIT):
                candidate = config.classes[int(rng.integers(n_classes))]
                if not _conflicts(placed, candidate, onset, offset, config.min_same_class_gap):
                    class_id = candidate
                    break
            if class_id is None:
                raise GenerationError(
                    f"could not place an event at [{onset:.3f}, {offset:.3f}) in {file_id}: "
                    f"every class violates the same-class separation after "
                    f"{CLASS_RESAMPLE_LIMIT} resamples"
                )
            salience = float(rng.uniform(*config.salience_range))
            placed.append(
                EventInstance(
                    file_id=file_id,
                    class_id=class_id,
                    onset=float(onset),
                    offset=float(offset),
                    salience=salience,
                )
            )
            cursor = offset
    placed.sort(key=lambda ev: (ev.onset, ev.offset, ev.class_id))
    return placed


def generate_soundscape(
    config: SoundscapeConfig, rng: np.random.Generator | None = None
) -> list[EventInstance]:
    """Generate event lists for all files in the config.

    Deterministic given the config seed (or the supplied generator); each
    file draws from its own child stream.
    """
    if rng is None:
        rng = substream(config.seed, "soundscape")
    events: list[EventInstance] = []
    file_ids = config.file_ids()
    children = rng.spawn(len(file_ids)) if file_ids else []
    for file_id, child in zip(file_ids, children):
        events.extend(_generate_file(config, file_id, child))
    return events
