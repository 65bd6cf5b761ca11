"""Pipeline configuration: defaults, flat key-value files, config hashing.

A config is serialized as sorted ``key = value`` lines with dotted keys
(``soundscape.n_files = 20``). The sha256 of that canonical text identifies
the configuration in every artifact header.
"""

from __future__ import annotations

import hashlib
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path

from .soundscape import SoundscapeConfig
from .workers import Subpopulation, default_population


@dataclass(frozen=True)
class CampaignConfig:
    length: int = 10
    hop: int = 1
    workers_per_hit: int = 5
    worker_pool_size: int = 680
    max_hits_per_worker: int = 50
    min_separation: float = 15.0


@dataclass(frozen=True)
class MaceConfig:
    restarts: int = 10
    iterations: int = 50
    smoothing: float = 0.01
    tol: float = 1e-6
    decision_threshold: float = 0.5
    label_prior_yes: float = 0.5


@dataclass(frozen=True)
class AggregationConfig:
    modes: tuple[str, ...] = ("all", "filtered", "mace")
    tau: float = 0.8
    competence_threshold: float = 0.6


@dataclass(frozen=True)
class MetricsConfig:
    segment_length: float = 1.0
    intersection: tuple[tuple[float, float], ...] = ((0.7, 0.7), (0.1, 0.1))


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    out: str = "runs/default"
    soundscape: SoundscapeConfig = field(default_factory=SoundscapeConfig)
    campaign: CampaignConfig = field(default_factory=CampaignConfig)
    population: tuple[Subpopulation, ...] = field(default_factory=default_population)
    mace: MaceConfig = field(default_factory=MaceConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def to_flat(self) -> dict[str, str]:
        s = self.soundscape
        c = self.campaign
        m = self.mace
        a = self.aggregation
        mt = self.metrics
        flat = {
            "seed": str(self.seed),
            "out": self.out,
            "soundscape.n_files": str(s.n_files),
            "soundscape.duration": _fmt(s.duration),
            "soundscape.max_polyphony": str(s.max_polyphony),
            "soundscape.gap_range": _fmt_pair(s.gap_range),
            "soundscape.classes": ",".join(s.classes),
            "soundscape.event_duration_range": _fmt_pair(s.event_duration_range),
            "soundscape.salience_range": _fmt_pair(s.salience_range),
            "soundscape.edge_margin": _fmt(s.edge_margin),
            "soundscape.min_same_class_gap": _fmt(s.min_same_class_gap),
            "soundscape.file_prefix": s.file_prefix,
            "campaign.length": str(c.length),
            "campaign.hop": str(c.hop),
            "campaign.workers_per_hit": str(c.workers_per_hit),
            "campaign.worker_pool_size": str(c.worker_pool_size),
            "campaign.max_hits_per_worker": str(c.max_hits_per_worker),
            "campaign.min_separation": _fmt(c.min_separation),
            "mace.restarts": str(m.restarts),
            "mace.iterations": str(m.iterations),
            "mace.smoothing": _fmt(m.smoothing),
            "mace.tol": _fmt(m.tol),
            "mace.decision_threshold": _fmt(m.decision_threshold),
            "mace.label_prior_yes": _fmt(m.label_prior_yes),
            "aggregation.modes": ",".join(a.modes),
            "aggregation.tau": _fmt(a.tau),
            "aggregation.competence_threshold": _fmt(a.competence_threshold),
            "metrics.segment_length": _fmt(mt.segment_length),
            "metrics.intersection": ",".join(f"{d:g}:{g:g}" for d, g in mt.intersection),
        }
        for sub in self.population:
            prefix = f"population.{sub.name}"
            flat[f"{prefix}.fraction"] = _fmt(sub.fraction)
            flat[f"{prefix}.trust_range"] = _fmt_pair(sub.trust_range)
            flat[f"{prefix}.spam_yes_range"] = _fmt_pair(sub.spam_yes_range)
            flat[f"{prefix}.miss_prob"] = _fmt(sub.miss_prob)
            flat[f"{prefix}.salience_slope"] = _fmt(sub.salience_slope)
            flat[f"{prefix}.false_alarm_prob"] = _fmt(sub.false_alarm_prob)
        return flat

    def to_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in sorted(self.to_flat().items())) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()[:12]

    def header(self, stage: str) -> dict[str, object]:
        return {"stage": stage, "config": self.config_hash, "seed": self.seed}

    @classmethod
    def from_flat(cls, flat: Mapping[str, str]) -> "PipelineConfig":
        cfg = cls()
        base = cfg.to_flat()
        population_names = {k.split(".")[1] for k in flat if k.startswith("population.")}
        unknown = [
            k
            for k in flat
            if k not in base and not (k.startswith("population.") and k.count(".") == 2)
        ]
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        get = lambda key, fallback: flat.get(key, base.get(key, fallback))  # noqa: E731

        soundscape = SoundscapeConfig(
            n_files=int(get("soundscape.n_files", "20")),
            duration=float(get("soundscape.duration", "180")),
            max_polyphony=int(get("soundscape.max_polyphony", "2")),
            gap_range=_parse_pair(get("soundscape.gap_range", "2,10")),
            classes=tuple(get("soundscape.classes", "").split(",")),
            event_duration_range=_parse_pair(get("soundscape.event_duration_range", "1,10")),
            salience_range=_parse_pair(get("soundscape.salience_range", "0,1")),
            edge_margin=float(get("soundscape.edge_margin", "0")),
            min_same_class_gap=float(get("soundscape.min_same_class_gap", "0")),
            file_prefix=get("soundscape.file_prefix", "soundscape"),
            seed=int(get("seed", "0")),
        )
        campaign = CampaignConfig(
            length=int(get("campaign.length", "10")),
            hop=int(get("campaign.hop", "1")),
            workers_per_hit=int(get("campaign.workers_per_hit", "5")),
            worker_pool_size=int(get("campaign.worker_pool_size", "680")),
            max_hits_per_worker=int(get("campaign.max_hits_per_worker", "50")),
            min_separation=float(get("campaign.min_separation", "15")),
        )
        mace = MaceConfig(
            restarts=int(get("mace.restarts", "10")),
            iterations=int(get("mace.iterations", "50")),
            smoothing=float(get("mace.smoothing", "0.01")),
            tol=float(get("mace.tol", "1e-06")),
            decision_threshold=float(get("mace.decision_threshold", "0.5")),
            label_prior_yes=float(get("mace.label_prior_yes", "0.5")),
        )
        aggregation = AggregationConfig(
            modes=tuple(get("aggregation.modes", "all,filtered,mace").split(",")),
            tau=float(get("aggregation.tau", "0.8")),
            competence_threshold=float(get("aggregation.competence_threshold", "0.6")),
        )
        metrics = MetricsConfig(
            segment_length=float(get("metrics.segment_length", "1")),
            intersection=tuple(
                tuple(float(x) for x in pair.split(":"))
                for pair in get("metrics.intersection", "0.7:0.7,0.1:0.1").split(",")
            ),
        )
        if population_names:
            population = []
            for name in sorted(population_names):
                prefix = f"population.{name}"
                if f"{prefix}.fraction" not in flat or f"{prefix}.trust_range" not in flat:
                    raise ValueError(f"subpopulation {name!r} needs fraction and trust_range")
                population.append(
                    Subpopulation(
                        name=name,
                        fraction=float(flat[f"{prefix}.fraction"]),
                        trust_range=_parse_pair(flat[f"{prefix}.trust_range"]),
                        spam_yes_range=_parse_pair(flat.get(f"{prefix}.spam_yes_range", "0.2,0.8")),
                        miss_prob=float(flat.get(f"{prefix}.miss_prob", "0.25")),
                        salience_slope=float(flat.get(f"{prefix}.salience_slope", "0.3")),
                        false_alarm_prob=float(flat.get(f"{prefix}.false_alarm_prob", "0.01")),
                    )
                )
            population = tuple(population)
        else:
            population = default_population()
        return cls(
            seed=int(get("seed", "0")),
            out=get("out", "runs/default"),
            soundscape=soundscape,
            campaign=campaign,
            population=population,
            mace=mace,
            aggregation=aggregation,
            metrics=metrics,
        )

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, seed=seed, soundscape=replace(self.soundscape, seed=seed))


def _fmt(value: float) -> str:
    return f"{value:g}"


def _fmt_pair(pair: tuple[float, float]) -> str:
    return f"{pair[0]:g},{pair[1]:g}"


def _parse_pair(text: str) -> tuple[float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ValueError(f"expected 'low,high', got {text!r}")
    return (float(parts[0]), float(parts[1]))


def parse_kv_file(path: str | os.PathLike[str]) -> dict[str, str]:
    """Parse a flat key-value config file (``key = value`` lines, # comments)."""
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def write_kv_file(path: str | os.PathLike[str], config: PipelineConfig) -> None:
    Path(path).write_text(config.to_text(), encoding="utf-8")
