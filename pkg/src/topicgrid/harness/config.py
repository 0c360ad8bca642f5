"""Pipeline configuration, loaded from JSON with per-section defaults."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigError
from ..loglab import PeriodSpec, SynthConfig
from ..models import ARCHITECTURES, ModelConfig


@dataclass
class TopicsConfig:
    K: int = 64
    alpha: float | None = None
    beta: float = 0.01
    iterations: int = 200
    fold_sweeps: int = 30
    fold_average: int = 10
    min_count: int = 2
    benchmark_period: int = 0


@dataclass
class SplitSpec:
    train: float = 0.70
    val: float = 0.08
    test: float = 0.22
    shift: int = 2

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be positive and sum to 1, got {fr}")
        if self.shift < 1:
            raise ConfigError("test-window shift must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    loss: str = "rle"
    archs: tuple[str, ...] = ARCHITECTURES

    def __post_init__(self):
        self.archs = tuple(self.archs)
        bad = [a for a in self.archs if a not in ARCHITECTURES]
        if bad:
            raise ConfigError(f"unknown architectures {bad}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr < 0:
            raise ConfigError("epochs and batch_size must be positive, lr non-negative")
        if self.loss not in ("rle", "mse"):
            raise ConfigError(f"unknown loss {self.loss!r}")


@dataclass
class ReportConfig:
    heatmap_entities: int = 4
    plots: bool = True


@dataclass
class PipelineConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    periods: PeriodSpec | None = None
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def __post_init__(self):
        if self.topics.K != self.synth.topic_count:
            raise ConfigError(f"topics.K={self.topics.K} differs from synth.topic_count={self.synth.topic_count}")
        if self.model.k * self.model.k != self.topics.K:
            raise ConfigError(f"grid {self.model.k}x{self.model.k} cannot hold {self.topics.K} topics")
        spec = self.period_spec()
        if spec.count < self.split.shift + self.model.T + 1:
            raise ConfigError(
                f"{spec.count} periods cannot hold a test window shifted by {self.split.shift} with T={self.model.T}"
            )

    def period_spec(self) -> PeriodSpec:
        return self.periods if self.periods is not None else self.synth.period_spec()

    def stage_seed(self, stage: str) -> int:
        """Independent 32-bit seed for a named stage, derived from the global seed."""
        digest = hashlib.blake2b(f"{self.seed}:{stage}".encode(), digest_size=4).digest()
        return int.from_bytes(digest, "little")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["periods"] = asdict(self.period_spec())
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any], seed: int | None = None) -> "PipelineConfig":
        data = dict(data)
        if seed is not None:
            data["seed"] = seed
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        top_seed = int(data.get("seed", 0))
        synth = dict(data.get("synth", {}))
        synth.setdefault("seed", top_seed)
        model = dict(data.get("model", {}))
        model.setdefault("seed", top_seed)
        model.setdefault("arch", "mlp")
        return cls(
            seed=top_seed,
            synth=_build(SynthConfig, synth, "synth"),
            periods=_build(PeriodSpec, data["periods"], "periods") if data.get("periods") else None,
            topics=_build(TopicsConfig, data.get("topics", {}), "topics"),
            split=_build(SplitSpec, data.get("split", {}), "split"),
            model=_build(ModelConfig, model, "model"),
            train=_build(TrainConfig, data.get("train", {}), "train"),
            report=_build(ReportConfig, data.get("report", {}), "report"),
        )

    @classmethod
    def load(cls, path: str | Path | None, seed: int | None = None) -> "PipelineConfig":
        data = json.loads(Path(path).read_text()) if path else {}
        return cls.from_dict(data, seed)


def _build(kind, values: dict[str, Any], section: str):
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    try:
        return kind(**values)
    except TypeError as exc:
        raise ConfigError(f"bad [{section}] section: {exc}") from exc
