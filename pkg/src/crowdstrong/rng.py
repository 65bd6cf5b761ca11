"""Deterministic random-stream derivation.

One top-level integer seed fans out into named substreams, so each pipeline
stage (and each file/hit within a stage) draws from its own independent
generator. Streams are identified by string labels; the derivation is stable
across platforms and process runs.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _label_words(label: str) -> list[int]:
    # sha256 -> eight 32-bit words; stable, collision-safe entropy per label
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 32, 4)]


def seed_sequence(seed: int, *labels: str) -> np.random.SeedSequence:
    """Build a SeedSequence for `seed` specialized by the given labels."""
    entropy: list[int] = [int(seed)]
    for label in labels:
        entropy.extend(_label_words(label))
    return np.random.SeedSequence(entropy)


def substream(seed: int, *labels: str) -> np.random.Generator:
    """Return an independent generator for (seed, labels).

    Identical arguments always produce an identical stream; distinct labels
    produce streams that are independent for practical purposes.
    """
    return np.random.default_rng(seed_sequence(seed, *labels))
