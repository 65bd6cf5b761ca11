"""Annotation campaign construction.

Every segment of every file becomes one HIT answered by a fixed number of
distinct workers. The assignment respects two global constraints: a worker
never takes two segments of one file that lie closer than a separation
distance (so nobody annotates overlapping windows), and no worker exceeds a
hit quota. Batching is modeled implicitly through these constraints.
"""

from __future__ import annotations

import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import eventio
from .rng import substream
from .timeline import SegmentSpec, segment_timeline

DEFAULT_WORKERS_PER_HIT = 5
DEFAULT_MAX_HITS_PER_WORKER = 50
DEFAULT_MIN_SEPARATION = 15.0


class AssignmentError(RuntimeError):
    """Raised when no feasible worker assignment is found."""


@dataclass(frozen=True)
class Hit:
    """One crowdsourcing unit task: a segment plus its assigned workers."""

    hit_id: str
    segment: SegmentSpec
    workers: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(set(self.workers)) != len(self.workers):
            raise ValueError(f"hit {self.hit_id} assigns a worker twice")


def default_worker_ids(n: int) -> list[str]:
    return [f"w{i:04d}" for i in range(n)]


def build_campaign(
    files: Mapping[str, float] | Sequence[tuple[str, float]],
    workers: Sequence[str] | int,
    length: int = 10,
    hop: int = 1,
    workers_per_hit: int = DEFAULT_WORKERS_PER_HIT,
    max_hits_per_worker: int = DEFAULT_MAX_HITS_PER_WORKER,
    min_separation: float = DEFAULT_MIN_SEPARATION,
    rng: np.random.Generator | None = None,
    max_attempts: int = 25,
) -> list[Hit]:
    """Assign workers to every segment of every file.

    Uses a randomized greedy pass over a shuffled segment order; on a dead
    end the whole assignment restarts with a fresh shuffle. Raises
    AssignmentError naming the binding constraint when `max_attempts`
    restarts all fail.
    """
    if rng is None:
        rng = substream(0, "campaign")
    if isinstance(workers, int):
        worker_ids = default_worker_ids(workers)
    else:
        worker_ids = list(workers)
    if len(set(worker_ids)) != len(worker_ids):
        raise ValueError("duplicate worker ids in pool")
    if workers_per_hit < 1:
        raise ValueError("workers_per_hit must be >= 1")
    if len(worker_ids) < workers_per_hit:
        raise AssignmentError(
            f"pool of {len(worker_ids)} workers cannot staff hits of {workers_per_hit}"
        )

    file_items = list(files.items()) if isinstance(files, Mapping) else list(files)
    segments: list[SegmentSpec] = []
    for file_id, duration in file_items:
        segments.extend(segment_timeline(file_id, duration, length=length, hop=hop))
    if len(segments) * workers_per_hit > len(worker_ids) * max_hits_per_worker:
        raise AssignmentError(
            f"{len(segments)} segments x {workers_per_hit} workers need more than "
            f"{len(worker_ids)} x {max_hits_per_worker} hit slots"
        )

    n_workers = len(worker_ids)
    file_index = {fid: i for i, (fid, _) in enumerate(file_items)}
    last_error = ""
    for _ in range(max_attempts):
        order = rng.permutation(len(segments))
        remaining = np.full(n_workers, max_hits_per_worker, dtype=np.int64)
        taken_starts: dict[tuple[int, int], list[int]] = {}
        assignment: dict[int, np.ndarray] = {}
        failed = False
        for seg_pos in order:
            seg = segments[seg_pos]
            fidx = file_index[seg.file_id]
            # prefer workers already active in this file (they pack their
            # per-file capacity like the batch design would), fall back to
            # fresh workers
            packed = []
            fresh = []
            capacity_blocked = 0
            separation_blocked = 0
            for w in range(n_workers):
                if remaining[w] <= 0:
                    capacity_blocked += 1
                    continue
                starts = taken_starts.get((w, fidx))
                if starts is None:
                    fresh.append(w)
                    continue
                if any(abs(seg.start - s) < min_separation for s in starts):
                    separation_blocked += 1
                    continue
                packed.append(w)
            if len(packed) + len(fresh) < workers_per_hit:
                binding = (
                    "max_hits_per_worker"
                    if capacity_blocked >= separation_blocked
                    else "min_separation"
                )
                last_error = (
                    f"segment {seg.file_id}:{seg.start} has "
                    f"{len(packed) + len(fresh)} eligible workers "
                    f"(< {workers_per_hit}); binding constraint: {binding}"
                )
                failed = True
                break
            chosen: list[int] = []
            for group in (packed, fresh):
                need = workers_per_hit - len(chosen)
                if need <= 0:
                    break
                if len(group) <= need:
                    chosen.extend(group)
                else:
                    chosen.extend(
                        int(w) for w in rng.choice(np.asarray(group), size=need, replace=False)
                    )
            assignment[seg_pos] = np.asarray(chosen)
            for w in chosen:
                remaining[w] -= 1
                taken_starts.setdefault((int(w), fidx), []).append(seg.start)
        if not failed:
            hits = []
            for seg_pos, seg in enumerate(segments):
                chosen = sorted(worker_ids[int(w)] for w in assignment[seg_pos])
                hits.append(
                    Hit(
                        hit_id=f"{seg.file_id}:{seg.start:03d}",
                        segment=seg,
                        workers=tuple(chosen),
                    )
                )
            return hits
    raise AssignmentError(f"no feasible assignment in {max_attempts} attempts; {last_error}")


def check_campaign(
    hits: Iterable[Hit],
    workers_per_hit: int = DEFAULT_WORKERS_PER_HIT,
    max_hits_per_worker: int = DEFAULT_MAX_HITS_PER_WORKER,
    min_separation: float = DEFAULT_MIN_SEPARATION,
) -> list[str]:
    """Exhaustive pairwise constraint check; returns violation descriptions."""
    violations = []
    load: dict[str, int] = {}
    by_worker_file: dict[tuple[str, str], list[int]] = {}
    for hit in hits:
        if len(hit.workers) != workers_per_hit:
            violations.append(f"{hit.hit_id}: {len(hit.workers)} workers != {workers_per_hit}")
        for w in hit.workers:
            load[w] = load.get(w, 0) + 1
            by_worker_file.setdefault((w, hit.segment.file_id), []).append(hit.segment.start)
    for w, count in load.items():
        if count > max_hits_per_worker:
            violations.append(f"worker {w} holds {count} hits > {max_hits_per_worker}")
    for (w, file_id), starts in by_worker_file.items():
        starts = sorted(starts)
        for i, a in enumerate(starts):
            for b in starts[i + 1 :]:
                if abs(b - a) < min_separation:
                    violations.append(
                        f"worker {w} has segments {a} and {b} of {file_id} "
                        f"closer than {min_separation}"
                    )
    return violations


def write_campaign_jsonl(
    path: str | os.PathLike[str],
    hits: Iterable[Hit],
    header: Mapping[str, object] | None = None,
) -> None:
    records = [
        {
            "hit": h.hit_id,
            "file": h.segment.file_id,
            "start": h.segment.start,
            "workers": list(h.workers),
        }
        for h in sorted(hits, key=lambda h: (h.segment.file_id, h.segment.start))
    ]
    eventio.write_jsonl_records(path, records, header=header)


def read_campaign_jsonl(path: str | os.PathLike[str], length: int = 10) -> list[Hit]:
    hits = []
    for record in eventio.read_jsonl_records(path):
        segment = SegmentSpec(
            file_id=str(record["file"]), start=int(record["start"]), length=length
        )
        hits.append(
            Hit(
                hit_id=str(record["hit"]),
                segment=segment,
                workers=tuple(str(w) for w in record["workers"]),
            )
        )
    return hits
