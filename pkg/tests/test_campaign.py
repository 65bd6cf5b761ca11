from __future__ import annotations

import pytest

from crowdstrong.campaign import (
    AssignmentError,
    Hit,
    build_campaign,
    check_campaign,
    default_worker_ids,
    read_campaign_jsonl,
    write_campaign_jsonl,
)
from crowdstrong.rng import substream
from crowdstrong.timeline import SegmentSpec


def test_hit_rejects_duplicate_worker():
    seg = SegmentSpec("f", 0, 10)
    with pytest.raises(ValueError):
        Hit("h", seg, ("w1", "w1", "w2", "w3", "w4"))


def test_full_default_scale_campaign():
    files = {f"file_{i:02d}": 180.0 for i in range(20)}
    hits = build_campaign(files, 680, rng=substream(0, "campaign"))
    assert len(hits) == 3420
    assert all(len(h.workers) == 5 for h in hits)
    assert check_campaign(hits) == []


def test_close_segments_never_share_workers():
    hits = build_campaign({"f": 30.0}, 400, rng=substream(1, "campaign"))
    by_start = {h.segment.start: set(h.workers) for h in hits}
    assert not (by_start[3] & by_start[12])  # |12 - 3| = 9 < 15
    # brute-force the whole constraint independently of check_campaign
    for a in by_start:
        for b in by_start:
            if a < b and b - a < 15:
                assert not (by_start[a] & by_start[b])


def test_far_segments_may_share_workers():
    # with aggressive reuse, some >= 15 s pair shares a worker
    hits = build_campaign({"f": 30.0}, 400, rng=substream(1, "campaign"))
    by_start = {h.segment.start: set(h.workers) for h in hits}
    shared = [
        (a, b)
        for a in by_start
        for b in by_start
        if a < b and b - a >= 15 and by_start[a] & by_start[b]
    ]
    assert shared


def test_max_hits_per_worker_respected():
    hits = build_campaign(
        {"f": 180.0, "g": 180.0}, 150, max_hits_per_worker=15, rng=substream(2, "campaign")
    )
    load: dict[str, int] = {}
    for h in hits:
        for w in h.workers:
            load[w] = load.get(w, 0) + 1
    assert max(load.values()) <= 15


def test_capacity_infeasibility_reported():
    with pytest.raises(AssignmentError, match="hit slots"):
        build_campaign({"f": 180.0}, 10, max_hits_per_worker=50, rng=substream(0, "x"))


def test_pool_smaller_than_hit_size_rejected():
    with pytest.raises(AssignmentError, match="cannot staff"):
        build_campaign({"f": 30.0}, 3, workers_per_hit=5)


def test_separation_infeasibility_names_constraint():
    # 3 workers per hit from a pool of 6: segments 15 s apart exhaust pairs
    with pytest.raises(AssignmentError, match="min_separation"):
        build_campaign(
            {"f": 60.0},
            6,
            workers_per_hit=3,
            max_hits_per_worker=1000,
            rng=substream(3, "campaign"),
            max_attempts=3,
        )


def test_deterministic_given_stream():
    a = build_campaign({"f": 60.0}, 150, rng=substream(5, "c"))
    b = build_campaign({"f": 60.0}, 150, rng=substream(5, "c"))
    assert a == b


def test_manifest_round_trip(tmp_path):
    hits = build_campaign({"f": 30.0}, 400, rng=substream(1, "campaign"))
    path = tmp_path / "campaign.jsonl"
    write_campaign_jsonl(path, hits, header={"seed": 1})
    back = read_campaign_jsonl(path, length=10)
    assert back == sorted(hits, key=lambda h: (h.segment.file_id, h.segment.start))


def test_default_worker_ids_shape():
    ids = default_worker_ids(3)
    assert ids == ["w0000", "w0001", "w0002"]


def test_check_campaign_flags_violations():
    seg_a = SegmentSpec("f", 0, 10)
    seg_b = SegmentSpec("f", 5, 10)
    hits = [
        Hit("a", seg_a, ("w1", "w2", "w3", "w4", "w5")),
        Hit("b", seg_b, ("w1", "w6", "w7", "w8", "w9")),
    ]
    violations = check_campaign(hits)
    assert any("closer than" in v for v in violations)
