"""Strong sound-event labels from crowdsourced weak labels.

Pipeline: synthesize ground-truth timelines, build an annotation campaign
over overlapping windows, simulate crowd workers, estimate annotator
competence and true tags by EM, stack the window opinions into per-frame
counts, binarize and extract strong labels, and score everything against the
ground truth.
"""

from .aggregate import (
    AggregationMode,
    CampaignAnnotations,
    FrameOpinionCounts,
    StrongLabelEstimator,
    binarize,
    estimate_strong_labels,
    majority_tags,
    segment_tags_by_rule,
    stack_opinions,
    union_tags,
)
from .campaign import AssignmentError, Hit, build_campaign, check_campaign
from .mace import (
    AnnotatorModel,
    BinaryOpinionTable,
    LabelPosteriors,
    MaceCompetence,
    build_binary_instances,
    e_step,
    filter_by_competence,
    m_step,
    predict_tags,
    run_mace,
)
from .metrics import (
    AgreementReport,
    IntersectionConfig,
    IntersectionReport,
    SegmentMetricsReport,
    TagMetricsReport,
    intersection_f1,
    krippendorff_alpha,
    segment_metrics,
    tag_prf,
)
from .soundscape import GenerationError, SoundscapeConfig, generate_soundscape
from .timeline import (
    EventInstance,
    FrameActivity,
    SegmentSpec,
    extract_events_from_frames,
    max_polyphony,
    quantize_events_to_frames,
    segment_ground_truth_tags,
    segment_timeline,
)
from .workers import (
    SegmentAnnotation,
    Subpopulation,
    WorkerProfile,
    annotate,
    default_population,
    sample_worker_pool,
    simulate_campaign,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationMode",
    "AgreementReport",
    "AnnotatorModel",
    "AssignmentError",
    "BinaryOpinionTable",
    "CampaignAnnotations",
    "EventInstance",
    "FrameActivity",
    "FrameOpinionCounts",
    "GenerationError",
    "Hit",
    "IntersectionConfig",
    "IntersectionReport",
    "LabelPosteriors",
    "MaceCompetence",
    "SegmentAnnotation",
    "SegmentMetricsReport",
    "SegmentSpec",
    "SoundscapeConfig",
    "StrongLabelEstimator",
    "Subpopulation",
    "TagMetricsReport",
    "WorkerProfile",
    "annotate",
    "binarize",
    "build_binary_instances",
    "build_campaign",
    "check_campaign",
    "default_population",
    "e_step",
    "estimate_strong_labels",
    "extract_events_from_frames",
    "filter_by_competence",
    "generate_soundscape",
    "intersection_f1",
    "krippendorff_alpha",
    "m_step",
    "majority_tags",
    "max_polyphony",
    "predict_tags",
    "quantize_events_to_frames",
    "run_mace",
    "sample_worker_pool",
    "segment_ground_truth_tags",
    "segment_metrics",
    "segment_tags_by_rule",
    "segment_timeline",
    "simulate_campaign",
    "stack_opinions",
    "tag_prf",
    "union_tags",
]
