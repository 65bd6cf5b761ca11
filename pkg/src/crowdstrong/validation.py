"""Input validation helpers shared across modules."""

from __future__ import annotations

from collections.abc import Iterable, Sequence


def check_probability(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")
    return value


def check_unit_interval(value: float, name: str, *, closed_low: bool = False) -> float:
    """Validate a threshold in (0, 1] (or [0, 1] with closed_low)."""
    value = float(value)
    low_ok = value >= 0.0 if closed_low else value > 0.0
    if not (low_ok and value <= 1.0):
        bracket = "[0, 1]" if closed_low else "(0, 1]"
        raise ValueError(f"{name} must be in {bracket}, got {value}")
    return value


def check_ordered_pair(pair: Sequence[float], name: str, *, minimum: float = 0.0) -> tuple[float, float]:
    """Validate a (low, high) range with low <= high and low >= minimum."""
    if len(pair) != 2:
        raise ValueError(f"{name} must be a (low, high) pair, got {pair!r}")
    low, high = float(pair[0]), float(pair[1])
    if low > high:
        raise ValueError(f"{name} must be ordered, got ({low}, {high})")
    if low < minimum:
        raise ValueError(f"{name} must start at or above {minimum}, got {low}")
    return low, high


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if value <= 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value


def check_vocabulary(vocabulary: Iterable[str]) -> tuple[str, ...]:
    vocab = tuple(vocabulary)
    if not vocab:
        raise ValueError("vocabulary must not be empty")
    if len(set(vocab)) != len(vocab):
        raise ValueError("vocabulary contains duplicate class ids")
    return vocab
