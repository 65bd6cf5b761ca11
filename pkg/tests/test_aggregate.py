from __future__ import annotations

import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from crowdstrong.aggregate import (
    AggregationMode,
    CampaignAnnotations,
    FrameOpinionCounts,
    StrongLabelEstimator,
    binarize,
    estimate_strong_labels,
    frame_counts_by_file,
    majority_tags,
    segment_tags_by_rule,
    stack_opinions,
    union_tags,
)
from crowdstrong.campaign import build_campaign
from crowdstrong.rng import substream
from crowdstrong.soundscape import SoundscapeConfig, generate_soundscape
from crowdstrong.timeline import (
    EventInstance,
    SegmentSpec,
    extract_events_from_frames,
    quantize_events_to_frames,
    segment_ground_truth_tags,
    segment_timeline,
)
from crowdstrong.workers import SegmentAnnotation, perfect_worker, simulate_campaign

from oracles import count_opinions_per_frame


def ann(worker, start, tags, file_id="f"):
    return SegmentAnnotation(worker, SegmentSpec(file_id, start, 10), frozenset(tags))


class TestVotes:
    def test_majority_includes_three_of_five(self):
        anns = [ann(f"w{i}", 0, {"dog"} if i < 3 else set()) for i in range(5)]
        assert majority_tags(anns) == {"dog"}

    def test_majority_excludes_two_of_five(self):
        anns = [ann(f"w{i}", 0, {"siren"} if i < 2 else set()) for i in range(5)]
        assert majority_tags(anns) == frozenset()

    def test_majority_tie_excluded(self):
        anns = [ann(f"w{i}", 0, {"dog"} if i < 2 else set()) for i in range(4)]
        assert majority_tags(anns) == frozenset()

    def test_majority_needs_annotations(self):
        with pytest.raises(ValueError):
            majority_tags([])

    def test_union_includes_single_vote(self):
        anns = [ann(f"w{i}", 0, {"dog"} if i == 0 else set()) for i in range(5)]
        assert union_tags(anns) == {"dog"}

    def test_union_of_nothing_is_empty(self):
        assert union_tags([]) == frozenset()

    def test_mixed_segment_annotations_rejected(self):
        with pytest.raises(ValueError, match="multiple segments"):
            majority_tags([ann("w1", 0, {"a"}), ann("w2", 15, {"a"})])

    def test_segment_tags_by_rule(self):
        anns = [ann(f"w{i}", 0, {"dog"}) for i in range(3)] + [
            ann(f"w{i}", 15, {"dog"} if i == 0 else set()) for i in range(3)
        ]
        assert segment_tags_by_rule(anns, "majority") == {
            ("f", 0): frozenset({"dog"}),
            ("f", 15): frozenset(),
        }
        assert segment_tags_by_rule(anns, "union")[("f", 15)] == {"dog"}


class TestStackOpinions:
    def test_interior_availability_matches_worker_count(self):
        segments = segment_timeline("f", 30, length=10, hop=1)
        opinions = [(seg, frozenset()) for seg in segments for _ in range(5)]
        counts = stack_opinions(opinions, 30.0, ("a",), "f")
        # interior frames are covered by 10 windows x 5 opinions
        assert (counts.available[9:21] == 50).all()
        assert counts.available[0] == 5

    def test_edge_frame_single_cover_in_tag_mode(self):
        segments = segment_timeline("f", 30, length=10, hop=1)
        opinions = [(seg, frozenset()) for seg in segments]
        counts = stack_opinions(opinions, 30.0, ("a",), "f")
        assert counts.available[0] == 1
        assert counts.available[29] == 1

    def test_counts_match_bruteforce_recount(self):
        rng = substream(3, "stack")
        segments = segment_timeline("f", 30, length=10, hop=1)
        opinions = []
        for seg in segments:
            for _ in range(3):
                tags = frozenset({"a"} if rng.random() < 0.5 else set())
                opinions.append((seg, tags))
        counts = stack_opinions(opinions, 30.0, ("a",), "f")
        raw = [(seg.start, tags) for seg, tags in opinions]
        active, available = count_opinions_per_frame(raw, 30, 10, "a")
        assert (counts.active[0] == active).all()
        assert (counts.available == available).all()

    def test_unknown_file_rejected(self):
        seg = SegmentSpec("other", 0, 10)
        with pytest.raises(ValueError, match="fed to stack"):
            stack_opinions([(seg, frozenset())], 30.0, ("a",), "f")

    def test_segment_past_duration_rejected(self):
        seg = SegmentSpec("f", 25, 10)
        with pytest.raises(ValueError, match="past duration"):
            stack_opinions([(seg, frozenset())], 30.0, ("a",), "f")


class TestBinarize:
    def make_counts(self, active, available):
        return FrameOpinionCounts(
            file_id="f",
            classes=("a",),
            active=np.array([active], dtype=np.int64),
            available=np.array(available, dtype=np.int64),
        )

    def test_boundary_ratio_is_active(self):
        counts = self.make_counts([8], [10])
        assert binarize(counts, 0.8).grid[0, 0]

    def test_below_boundary_inactive(self):
        counts = self.make_counts([7], [10])
        assert not binarize(counts, 0.8).grid[0, 0]

    def test_zero_available_inactive(self):
        counts = self.make_counts([0], [0])
        assert not binarize(counts, 0.8).grid[0, 0]

    def test_tau_validated(self):
        counts = self.make_counts([1], [1])
        with pytest.raises(ValueError):
            binarize(counts, 0.0)
        with pytest.raises(ValueError):
            binarize(counts, 1.2)

    def test_monotone_in_tau(self):
        rng = substream(11, "tau")
        available = rng.integers(0, 20, size=50)
        active = (rng.random(50) * (available + 1)).astype(np.int64)
        active = np.minimum(active, available)
        counts = FrameOpinionCounts(
            file_id="f", classes=("a",), active=active[None, :], available=available
        )
        previous = None
        for tau in (0.2, 0.5, 0.8, 1.0):
            grid = binarize(counts, tau).grid[0]
            if previous is not None:
                assert not (grid & ~previous).any()  # raising tau never adds frames
            previous = grid


def perfect_tag_opinions(events, duration, file_id="f"):
    segments = segment_timeline(file_id, duration, length=10, hop=1)
    return {
        (file_id, seg.start): segment_ground_truth_tags(events, seg) for seg in segments
    }


class TestEstimateStrongLabels:
    def test_worked_example_two_frame_extension(self):
        events = [EventInstance("f", "a", 12.0, 15.0)]
        tags = perfect_tag_opinions(events, 30.0)
        mode = AggregationMode(kind="mace", tau=0.8)
        estimated = estimate_strong_labels([], {"f": 30.0}, ("a",), mode, mace_tags=tags)
        assert [(e.onset, e.offset) for e in estimated] == [(10.0, 17.0)]

    def test_perfect_tags_tau_one_reproduce_quantized_truth(self):
        events = [
            EventInstance("f", "a", 12.4, 15.0),
            EventInstance("f", "b", 11.0, 13.5),
        ]
        tags = perfect_tag_opinions(events, 40.0)
        mode = AggregationMode(kind="mace", tau=1.0)
        estimated = estimate_strong_labels([], {"f": 40.0}, ("a", "b"), mode, mace_tags=tags)
        truth = extract_events_from_frames(
            quantize_events_to_frames(events, 40.0, 1.0, ("a", "b"), "f")
        )
        assert estimated == truth

    def test_boundary_extension_law_random_interior_events(self):
        rng = substream(21, "ext")
        for trial in range(30):
            onset = float(rng.uniform(12, 36))
            length = float(rng.uniform(1.5, 9.5))
            events = [EventInstance("f", "a", onset, onset + length)]
            tags = perfect_tag_opinions(events, 60.0)
            mode = AggregationMode(kind="mace", tau=0.8)
            [est] = estimate_strong_labels([], {"f": 60.0}, ("a",), mode, mace_tags=tags)
            assert est.onset == math.floor(onset) - 2
            assert est.offset == math.ceil(onset + length) + 2

    def test_empty_annotations_give_empty_events(self):
        mode = AggregationMode(kind="all", tau=0.8)
        assert estimate_strong_labels([], {"f": 30.0}, ("a",), mode) == []

    def test_filtered_mode_needs_competence(self):
        mode = AggregationMode(kind="filtered")
        with pytest.raises(ValueError, match="competences"):
            estimate_strong_labels([ann("w", 0, set())], {"f": 30.0}, ("a",), mode)

    def test_mace_mode_needs_tags(self):
        mode = AggregationMode(kind="mace")
        with pytest.raises(ValueError, match="predicted tags"):
            estimate_strong_labels([ann("w", 0, set())], {"f": 30.0}, ("a",), mode)

    def test_filtered_mode_drops_low_competence_opinions(self):
        annotations = [ann("good", 0, {"a"}), ann("bad", 0, {"a"})]
        competence = {"good": 0.9, "bad": 0.2}
        mode = AggregationMode(kind="filtered", competence_threshold=0.6, tau=1.0)
        counts = frame_counts_by_file(
            annotations, {"f": 10.0}, ("a",), mode, competence=competence
        )["f"]
        assert (counts.available == 1).all()

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError, match="mode kind"):
            AggregationMode(kind="median")


class TestEstimatorApi:
    @pytest.fixture(scope="class")
    def campaign(self):
        # keep events away from the file edges and same-class near-gaps so
        # that tau = 1.0 with perfect tags is exactly the quantized truth
        cfg = SoundscapeConfig(
            n_files=2, duration=40.0, seed=8, edge_margin=10.0, min_same_class_gap=11.0
        )
        events = generate_soundscape(cfg)
        durations = {f: 40.0 for f in cfg.file_ids()}
        hits = build_campaign(durations, 200, rng=substream(8, "campaign"))
        workers = sorted({w for h in hits for w in h.workers})
        pool = [perfect_worker(w, cfg.classes) for w in workers]
        annotations = simulate_campaign(hits, pool, events, cfg.classes, seed=8)
        return CampaignAnnotations(
            annotations=annotations, durations=durations, vocabulary=cfg.classes
        ), events

    def test_params_clone_and_not_fitted(self, campaign):
        est = StrongLabelEstimator(mode="all", tau=1.0)
        assert clone(est).get_params() == est.get_params()
        with pytest.raises(NotFittedError):
            est.predict(campaign[0])

    def test_all_mode_matches_functional_path(self, campaign):
        data, _ = campaign
        est = StrongLabelEstimator(mode="all", tau=0.8).fit(data)
        direct = estimate_strong_labels(
            data.annotations, data.durations, data.vocabulary, AggregationMode("all", tau=0.8)
        )
        assert est.predict(data) == direct
        assert est.transform(data) == direct

    def test_mace_mode_with_perfect_workers_matches_truth_quantization(self, campaign):
        data, events = campaign
        est = StrongLabelEstimator(
            mode="mace", tau=1.0, restarts=2, iterations=20, random_state=1
        )
        predicted = est.fit_predict(data)
        truth = []
        for fid in sorted(data.durations):
            truth.extend(
                extract_events_from_frames(
                    quantize_events_to_frames(
                        [e for e in events if e.file_id == fid],
                        data.durations[fid],
                        1.0,
                        data.vocabulary,
                        fid,
                    )
                )
            )
        truth.sort(key=lambda e: (e.file_id, e.class_id, e.onset))
        assert predicted == truth
