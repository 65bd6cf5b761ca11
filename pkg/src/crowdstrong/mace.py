"""Annotator competence estimation over binary opinions.

Each multi-label segment annotation is decomposed into one yes/no opinion per
(segment, class) item. The latent-variable model behind the estimates: every
opinion is either a copy of the item's true label (with probability `trust`,
the reported competence) or a draw from the worker's private yes/no spamming
preference. Expectation maximization alternates between inferring true-label
and spamming posteriors and re-estimating the per-worker parameters; several
random restarts guard against poor local optima.
"""

from __future__ import annotations

import hashlib
import os
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import eventio
from .validation import check_probability, check_unit_interval, check_vocabulary
from .workers import SegmentAnnotation

ItemKey = tuple[str, int, str]  # (file_id, segment_start, class_id)
SegmentKey = tuple[str, int]

DEFAULT_RESTARTS = 10
DEFAULT_ITERATIONS = 50
DEFAULT_SMOOTHING = 0.01
DEFAULT_TOLERANCE = 1e-6
TRUST_INIT_RANGE = (0.3, 0.99)
SPAM_YES_INIT_RANGE = (0.2, 0.8)


@dataclass
class BinaryOpinionTable:
    """Sparse (item, worker) -> yes/no opinions.

    A worker holds an opinion on item (segment, class) iff they annotated the
    segment: yes when the class is in their tag set, no otherwise. Items are
    ordered segment-major, class-minor; both orders are deterministic.
    """

    items: list[ItemKey]
    workers: list[str]
    classes: tuple[str, ...]
    item_index: np.ndarray
    worker_index: np.ndarray
    answers: np.ndarray
    segment_length: int = 10

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_workers(self) -> int:
        return len(self.workers)

    @property
    def n_opinions(self) -> int:
        return int(self.answers.shape[0])

    def segments(self) -> list[SegmentKey]:
        seen: dict[SegmentKey, None] = {}
        for file_id, start, _ in self.items:
            seen.setdefault((file_id, start), None)
        return list(seen)


def build_binary_instances(
    annotations: Sequence[SegmentAnnotation], vocabulary: Sequence[str]
) -> BinaryOpinionTable:
    """Decompose segment annotations into per-class binary opinions.

    Produces |segments| x |vocabulary| items; each annotation contributes one
    opinion per vocabulary class (explicit no for unselected classes).
    Duplicate (worker, segment) annotations are rejected.
    """
    vocab = check_vocabulary(vocabulary)
    segment_keys: dict[SegmentKey, int] = {}
    worker_ids: dict[str, int] = {}
    seen_pairs: set[tuple[str, SegmentKey]] = set()
    seg_length = None
    for ann in annotations:
        key = (ann.segment.file_id, ann.segment.start)
        pair = (ann.worker_id, key)
        if pair in seen_pairs:
            raise ValueError(
                f"duplicate annotation by {ann.worker_id} on segment {key[0]}:{key[1]}"
            )
        seen_pairs.add(pair)
        segment_keys.setdefault(key, len(segment_keys))
        worker_ids.setdefault(ann.worker_id, len(worker_ids))
        unknown = ann.tags - set(vocab)
        if unknown:
            raise ValueError(f"annotation tags {sorted(unknown)} not in vocabulary")
        if seg_length is None:
            seg_length = ann.segment.length
    ordered_segments = sorted(segment_keys)
    ordered_workers = sorted(worker_ids)
    seg_pos = {key: i for i, key in enumerate(ordered_segments)}
    worker_pos = {w: i for i, w in enumerate(ordered_workers)}
    n_classes = len(vocab)

    items: list[ItemKey] = [
        (file_id, start, class_id)
        for (file_id, start) in ordered_segments
        for class_id in vocab
    ]
    n_op = len(annotations) * n_classes
    item_index = np.empty(n_op, dtype=np.int64)
    worker_index = np.empty(n_op, dtype=np.int64)
    answers = np.zeros(n_op, dtype=np.int8)
    pos = 0
    for ann in annotations:
        base = seg_pos[(ann.segment.file_id, ann.segment.start)] * n_classes
        w = worker_pos[ann.worker_id]
        for ci, class_id in enumerate(vocab):
            item_index[pos] = base + ci
            worker_index[pos] = w
            answers[pos] = 1 if class_id in ann.tags else 0
            pos += 1
    # canonical opinion order: results must not depend on input order, down
    # to float summation
    order = np.lexsort((worker_index, item_index))
    item_index = item_index[order]
    worker_index = worker_index[order]
    answers = answers[order]
    return BinaryOpinionTable(
        items=items,
        workers=ordered_workers,
        classes=vocab,
        item_index=item_index,
        worker_index=worker_index,
        answers=answers,
        segment_length=seg_length if seg_length is not None else 10,
    )


@dataclass
class AnnotatorModel:
    """Per-worker trust (competence) and spamming preference."""

    workers: list[str]
    trust: np.ndarray
    spam_yes: np.ndarray

    def competence(self, worker_id: str) -> float:
        return float(self.trust[self.workers.index(worker_id)])

    def competence_map(self) -> dict[str, float]:
        return {w: float(t) for w, t in zip(self.workers, self.trust)}


@dataclass
class ExpectedCounts:
    """E-step sufficient statistics per worker."""

    trust: np.ndarray
    spam_yes: np.ndarray
    spam_no: np.ndarray


@dataclass
class LabelPosteriors:
    """Posterior yes-probability per item plus fit diagnostics."""

    items: list[ItemKey]
    p_yes: np.ndarray
    log_marginal_likelihood: float
    n_iterations: int
    restart_index: int
    log_likelihood_trace: tuple[float, ...] = ()
    restart_log_likelihoods: tuple[float, ...] = ()


def _validate_model(model: AnnotatorModel) -> None:
    if ((model.trust < 0) | (model.trust > 1)).any():
        raise ValueError("trust probabilities must lie in [0, 1]")
    if ((model.spam_yes < 0) | (model.spam_yes > 1)).any():
        raise ValueError("spam_yes probabilities must lie in [0, 1]")


def e_step(
    table: BinaryOpinionTable,
    model: AnnotatorModel,
    label_prior_yes: float = 0.5,
) -> tuple[np.ndarray, ExpectedCounts, float]:
    """Posterior inference under fixed worker parameters.

    For item i with opinions A_ij: P(T_i = t) is proportional to
    prior(t) * prod_j [trust_j * 1(A_ij = t) + (1 - trust_j) * spam_j(A_ij)],
    evaluated in log space. Items without any opinion keep the prior (a
    warning is emitted). Returns (p_yes per item, expected counts, log
    marginal likelihood).
    """
    check_probability(label_prior_yes, "label_prior_yes")
    _validate_model(model)
    widx = table.worker_index
    iidx = table.item_index
    ans = table.answers
    trust_w = model.trust[widx]
    spam_w = np.where(ans == 1, model.spam_yes[widx], 1.0 - model.spam_yes[widx])
    g = (1.0 - trust_w) * spam_w
    f_yes = g + trust_w * (ans == 1)
    f_no = g + trust_w * (ans == 0)
    with np.errstate(divide="ignore"):
        log_yes = np.log(f_yes)
        log_no = np.log(f_no)
    n = table.n_items
    loglik_yes = np.log(label_prior_yes) + np.bincount(iidx, weights=log_yes, minlength=n)
    loglik_no = np.log(1.0 - label_prior_yes) + np.bincount(iidx, weights=log_no, minlength=n)
    log_marginal = np.logaddexp(loglik_yes, loglik_no)
    ll = float(log_marginal.sum())
    with np.errstate(invalid="ignore"):
        p_yes = np.exp(loglik_yes - log_marginal)
    impossible = ~np.isfinite(log_marginal)
    if impossible.any():
        # zero-probability data (e.g. fully trusted workers disagreeing)
        p_yes[impossible] = label_prior_yes
    opinion_counts = np.bincount(iidx, minlength=n)
    if (opinion_counts == 0).any():
        warnings.warn(
            f"{int((opinion_counts == 0).sum())} items have no opinions; "
            "their posterior stays at the prior",
            stacklevel=2,
        )

    # spamming posterior per opinion, summed over both truth hypotheses
    p_yes_op = p_yes[iidx]
    with np.errstate(divide="ignore", invalid="ignore"):
        spam_if_yes = np.where(f_yes > 0, g / f_yes, 0.0)
        spam_if_no = np.where(f_no > 0, g / f_no, 0.0)
    spam_weight = p_yes_op * spam_if_yes + (1.0 - p_yes_op) * spam_if_no
    trust_weight = 1.0 - spam_weight
    nw = table.n_workers
    counts = ExpectedCounts(
        trust=np.bincount(widx, weights=trust_weight, minlength=nw),
        spam_yes=np.bincount(widx, weights=spam_weight * (ans == 1), minlength=nw),
        spam_no=np.bincount(widx, weights=spam_weight * (ans == 0), minlength=nw),
    )
    return p_yes, counts, ll


def m_step(
    counts: ExpectedCounts, smoothing: float = DEFAULT_SMOOTHING, workers: list[str] | None = None
) -> AnnotatorModel:
    """Re-estimate worker parameters from expected counts.

    Additive smoothing keeps the updates defined when a worker's counts
    vanish; with smoothing 0 an all-zero worker falls back to 0.5.
    """
    if smoothing < 0:
        raise ValueError(f"smoothing must be >= 0, got {smoothing}")
    if ((counts.trust < 0) | (counts.spam_yes < 0) | (counts.spam_no < 0)).any():
        raise ValueError("expected counts must be non-negative")
    spam_total = counts.spam_yes + counts.spam_no
    trust_denom = counts.trust + spam_total + 2 * smoothing
    with np.errstate(invalid="ignore"):
        trust = np.where(trust_denom > 0, (counts.trust + smoothing) / trust_denom, 0.5)
    spam_denom = spam_total + 2 * smoothing
    with np.errstate(invalid="ignore"):
        spam_yes = np.where(spam_denom > 0, (counts.spam_yes + smoothing) / spam_denom, 0.5)
    if workers is None:
        workers = [f"worker{i}" for i in range(len(trust))]
    return AnnotatorModel(workers=workers, trust=trust, spam_yes=spam_yes)


def _init_uniform(
    workers: Sequence[str], seed: int, restart: int, label: str, low: float, high: float
) -> np.ndarray:
    """Per-worker uniform draws keyed by worker identity.

    Keying the initialization to the worker id (not the worker's position)
    keeps the whole fit equivariant under relabeling and reordering.
    """
    values = np.empty(len(workers))
    for i, worker_id in enumerate(workers):
        digest = hashlib.sha256(f"{seed}:{restart}:{label}:{worker_id}".encode()).digest()
        u = int.from_bytes(digest[:8], "little") / 2**64
        values[i] = low + u * (high - low)
    return values


def run_mace(
    table: BinaryOpinionTable,
    restarts: int = DEFAULT_RESTARTS,
    iterations: int = DEFAULT_ITERATIONS,
    smoothing: float = DEFAULT_SMOOTHING,
    seed: int = 0,
    tol: float = DEFAULT_TOLERANCE,
    label_prior_yes: float = 0.5,
) -> tuple[AnnotatorModel, LabelPosteriors]:
    """Fit the annotator model by EM with random restarts.

    Each restart initializes worker parameters from a stream keyed by (seed,
    restart, worker id), alternates E and M steps until the log marginal
    likelihood moves by less than `tol` or `iterations` rounds pass, and the
    restart with the highest final likelihood wins. Deterministic given the
    seed.
    """
    if restarts < 1 or iterations < 1:
        raise ValueError("restarts and iterations must be >= 1")
    if table.n_opinions == 0:
        raise ValueError("opinion table is empty")
    best: tuple[float, int, AnnotatorModel, np.ndarray, list[float]] | None = None
    final_lls: list[float] = []
    for restart in range(restarts):
        model = AnnotatorModel(
            workers=list(table.workers),
            trust=_init_uniform(table.workers, seed, restart, "trust", *TRUST_INIT_RANGE),
            spam_yes=_init_uniform(
                table.workers, seed, restart, "spam", *SPAM_YES_INIT_RANGE
            ),
        )
        trace: list[float] = []
        prev_ll = -np.inf
        p_yes = np.full(table.n_items, label_prior_yes)
        for _ in range(iterations):
            p_yes, counts, ll = e_step(table, model, label_prior_yes)
            trace.append(ll)
            if abs(ll - prev_ll) < tol:
                break
            prev_ll = ll
            model = m_step(counts, smoothing, workers=model.workers)
        else:
            # parameters moved after the last E-step; refresh the posteriors
            p_yes, counts, ll = e_step(table, model, label_prior_yes)
            trace.append(ll)
        final_lls.append(trace[-1])
        if best is None or trace[-1] > best[0]:
            best = (trace[-1], restart, model, p_yes, trace)
    assert best is not None
    final_ll, restart_index, model, p_yes, trace = best
    posteriors = LabelPosteriors(
        items=list(table.items),
        p_yes=p_yes,
        log_marginal_likelihood=final_ll,
        n_iterations=len(trace),
        restart_index=restart_index,
        log_likelihood_trace=tuple(trace),
        restart_log_likelihoods=tuple(final_lls),
    )
    return model, posteriors


def predict_tags(
    posteriors: LabelPosteriors, decision_threshold: float = 0.5
) -> dict[SegmentKey, frozenset[str]]:
    """Segment tag sets from item posteriors: yes iff P(yes) >= threshold."""
    if not 0.0 < decision_threshold < 1.0:
        raise ValueError(f"decision_threshold must be in (0, 1), got {decision_threshold}")
    tags: dict[SegmentKey, set[str]] = {}
    for (file_id, start, class_id), p in zip(posteriors.items, posteriors.p_yes):
        key = (file_id, start)
        tags.setdefault(key, set())
        if p >= decision_threshold:
            tags[key].add(class_id)
    return {key: frozenset(v) for key, v in tags.items()}


def filter_by_competence(
    annotations: Iterable[SegmentAnnotation],
    model: AnnotatorModel,
    threshold: float,
) -> list[SegmentAnnotation]:
    """Keep only annotations of workers whose trust exceeds the threshold."""
    check_unit_interval(threshold, "threshold", closed_low=True)
    competence = model.competence_map()
    kept = []
    for ann in annotations:
        if ann.worker_id not in competence:
            raise ValueError(f"worker {ann.worker_id} has no estimated competence")
        if competence[ann.worker_id] > threshold:
            kept.append(ann)
    return kept


class MaceCompetence(BaseEstimator):
    """Scikit-learn style wrapper around the EM fit.

    `fit` consumes a BinaryOpinionTable and exposes per-worker competences
    plus per-item posteriors as fitted attributes; `predict_proba` and
    `predict` score any opinion table drawn from the same worker pool with a
    single E-step under the fitted parameters.
    """

    def __init__(
        self,
        restarts: int = DEFAULT_RESTARTS,
        iterations: int = DEFAULT_ITERATIONS,
        smoothing: float = DEFAULT_SMOOTHING,
        tol: float = DEFAULT_TOLERANCE,
        label_prior_yes: float = 0.5,
        decision_threshold: float = 0.5,
        random_state: int = 0,
    ) -> None:
        self.restarts = restarts
        self.iterations = iterations
        self.smoothing = smoothing
        self.tol = tol
        self.label_prior_yes = label_prior_yes
        self.decision_threshold = decision_threshold
        self.random_state = random_state

    def fit(self, X: BinaryOpinionTable, y=None) -> "MaceCompetence":
        model, posteriors = run_mace(
            X,
            restarts=self.restarts,
            iterations=self.iterations,
            smoothing=self.smoothing,
            seed=self.random_state,
            tol=self.tol,
            label_prior_yes=self.label_prior_yes,
        )
        self.model_ = model
        self.posteriors_ = posteriors
        self.worker_ids_ = list(model.workers)
        self.trust_ = model.trust
        self.spam_yes_ = model.spam_yes
        self.log_marginal_likelihood_ = posteriors.log_marginal_likelihood
        self.n_iter_ = posteriors.n_iterations
        self.restart_index_ = posteriors.restart_index
        return self

    def _posteriors_for(self, X: BinaryOpinionTable | None) -> LabelPosteriors:
        check_is_fitted(self, "model_")
        if X is None:
            return self.posteriors_
        if list(X.workers) != self.worker_ids_:
            raise ValueError("opinion table refers to a different worker pool")
        p_yes, _, ll = e_step(X, self.model_, self.label_prior_yes)
        return LabelPosteriors(
            items=list(X.items),
            p_yes=p_yes,
            log_marginal_likelihood=ll,
            n_iterations=1,
            restart_index=self.restart_index_,
        )

    def predict_proba(self, X: BinaryOpinionTable | None = None) -> np.ndarray:
        """Posterior yes-probability per item of X (fitted table when None)."""
        return self._posteriors_for(X).p_yes

    def predict(self, X: BinaryOpinionTable | None = None) -> dict[SegmentKey, frozenset[str]]:
        """Predicted tag set per segment of X (fitted table when None)."""
        return predict_tags(self._posteriors_for(X), self.decision_threshold)

    def filter_annotations(
        self, annotations: Iterable[SegmentAnnotation], threshold: float = 0.6
    ) -> list[SegmentAnnotation]:
        check_is_fitted(self, "model_")
        return filter_by_competence(annotations, self.model_, threshold)


# ---------------------------------------------------------------------------
# serialization


def write_competence_tsv(
    path: str | os.PathLike[str],
    model: AnnotatorModel,
    header: Mapping[str, object] | None = None,
) -> None:
    rows = [(w, f"{t:.6f}") for w, t in zip(model.workers, model.trust)]
    eventio.write_tsv_rows(path, rows, header=header)


def read_competence_tsv(path: str | os.PathLike[str]) -> dict[str, float]:
    competence = {}
    for lineno, line in enumerate(open(path, encoding="utf-8"), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected worker_id<TAB>theta, got {line!r}")
        competence[parts[0]] = float(parts[1])
    return competence


def write_posteriors_jsonl(
    path: str | os.PathLike[str],
    posteriors: LabelPosteriors,
    header: Mapping[str, object] | None = None,
) -> None:
    records = [
        {"file": file_id, "start": start, "class": class_id, "p_yes": round(float(p), 10)}
        for (file_id, start, class_id), p in zip(posteriors.items, posteriors.p_yes)
    ]
    eventio.write_jsonl_records(path, records, header=header)


def write_tags_jsonl(
    path: str | os.PathLike[str],
    tags: Mapping[SegmentKey, frozenset[str]],
    header: Mapping[str, object] | None = None,
) -> None:
    records = [
        {"file": file_id, "start": start, "labels": sorted(tags[(file_id, start)])}
        for (file_id, start) in sorted(tags)
    ]
    eventio.write_jsonl_records(path, records, header=header)


def read_tags_jsonl(path: str | os.PathLike[str]) -> dict[SegmentKey, frozenset[str]]:
    tags = {}
    for record in eventio.read_jsonl_records(path):
        tags[(str(record["file"]), int(record["start"]))] = frozenset(
            str(t) for t in record["labels"]
        )
    return tags
