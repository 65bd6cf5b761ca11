from __future__ import annotations

import dataclasses

import pytest

from crowdstrong.rng import substream
from crowdstrong.soundscape import GenerationError, SoundscapeConfig, generate_soundscape
from crowdstrong.timeline import validate_events

from oracles import polyphony_by_boundary_sort


def config(**overrides) -> SoundscapeConfig:
    return dataclasses.replace(SoundscapeConfig(), **overrides)


def test_zero_duration_yields_no_events():
    assert generate_soundscape(config(duration=0.0, n_files=2)) == []


def test_deterministic_given_seed():
    a = generate_soundscape(config(seed=11))
    b = generate_soundscape(config(seed=11))
    assert a == b
    c = generate_soundscape(config(seed=12))
    assert a != c


def test_polyphony_bounded_and_reached():
    events = generate_soundscape(config(seed=4))
    per_file: dict[str, list] = {}
    for ev in events:
        per_file.setdefault(ev.file_id, []).append(ev)
    assert len(per_file) == 20
    depths = [polyphony_by_boundary_sort(evs) for evs in per_file.values()]
    assert max(depths) == 2
    assert all(d <= 2 for d in depths)


def test_no_same_class_overlap_and_events_valid():
    cfg = config(seed=9)
    events = generate_soundscape(cfg)
    validate_events(events, duration=cfg.duration)  # raises on violation


def test_event_count_order_of_magnitude():
    # 20 files x 180 s at defaults: gap-after-offset placement gives roughly
    # 180 / (mean gap + mean duration) ~ 16 events per track; keep the batch
    # total in the same order of magnitude as real campaigns (hundreds to a
    # few thousand instances)
    events = generate_soundscape(config(seed=0))
    assert 500 <= len(events) <= 5000


def test_durations_and_salience_within_ranges():
    cfg = config(seed=2)
    for ev in generate_soundscape(cfg):
        assert cfg.event_duration_range[0] <= ev.duration <= cfg.event_duration_range[1]
        assert cfg.salience_range[0] <= ev.salience <= cfg.salience_range[1]


def test_edge_margin_keeps_boundaries_clear():
    cfg = config(seed=5, edge_margin=10.0)
    events = generate_soundscape(cfg)
    assert events, "margin config should still place events"
    for ev in events:
        assert ev.onset >= 10.0
        assert ev.offset <= cfg.duration - 10.0


def test_min_same_class_gap_enforced():
    cfg = config(seed=6, min_same_class_gap=11.0)
    events = generate_soundscape(cfg)
    per_key: dict[tuple[str, str], list] = {}
    for ev in events:
        per_key.setdefault((ev.file_id, ev.class_id), []).append(ev)
    for group in per_key.values():
        group.sort(key=lambda e: e.onset)
        for prev, cur in zip(group, group[1:]):
            assert cur.onset - prev.offset >= 11.0


def test_unsatisfiable_config_raises_after_bounded_retries():
    # one class, two tracks, events longer than the gaps: overlap is forced
    cfg = config(
        n_files=1,
        duration=100.0,
        classes=("only",),
        event_duration_range=(50.0, 60.0),
        seed=1,
    )
    with pytest.raises(GenerationError, match="resamples"):
        generate_soundscape(cfg)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        config(gap_range=(10.0, 2.0))
    with pytest.raises(ValueError):
        config(max_polyphony=0)
    with pytest.raises(ValueError):
        config(salience_range=(0.0, 1.5))
    with pytest.raises(ValueError):
        config(classes=("a", "a"))


def test_external_stream_is_honored():
    cfg = config(seed=3)
    a = generate_soundscape(cfg, substream(99, "x"))
    b = generate_soundscape(cfg, substream(99, "x"))
    c = generate_soundscape(cfg, substream(98, "x"))
    assert a == b and a != c
