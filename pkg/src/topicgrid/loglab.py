"""Access-log ingestion and a synthetic log generator with known dynamics.

Wire format: UTF-8, one record per line, ``entity<TAB>timestamp<TAB>resource text``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class LogEntry:
    entity_id: str
    timestamp: int
    resource_text: str

    def to_line(self) -> str:
        return f"{self.entity_id}\t{self.timestamp}\t{self.resource_text}\n"


class RejectedLine(DataError):
    """Raised by :func:`parse_log_line` for a malformed record."""

    def __init__(self, reason: str, line: str):
        super().__init__(f"{reason}: {line[:80]!r}")
        self.reason = reason


@dataclass(frozen=True)
class PeriodSpec:
    origin: int
    length: int
    count: int

    def __post_init__(self):
        if self.length <= 0 or self.count <= 0:
            raise ConfigError(f"period length and count must be positive: {self}")

    def index(self, timestamp: int) -> int | None:
        """Period index of ``timestamp`` or None when it falls outside the range."""
        p = (timestamp - self.origin) // self.length
        return p if 0 <= p < self.count else None


@dataclass
class EntityPeriodBundle:
    entity_id: str
    period_index: int
    documents: tuple[str, ...]
    raw_count: int = 0


@dataclass
class ParseStats:
    accepted: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def rejected_total(self) -> int:
        return sum(self.rejected.values())


@dataclass
class BucketStats:
    total: int = 0
    dropped: int = 0


def parse_log_line(line: str) -> LogEntry:
    if line.endswith("\n"):
        line = line[:-1]
    fields = line.split("\t")
    if len(fields) != 3:
        raise RejectedLine("field-count", line)
    entity, ts, text = fields
    if not entity:
        raise RejectedLine("empty-entity", line)
    try:
        timestamp = int(ts)
    except ValueError:
        raise RejectedLine("bad-timestamp", line) from None
    if not text.strip():
        raise RejectedLine("empty-text", line)
    return LogEntry(entity, timestamp, text)


def parse_log_stream(lines: Iterable[str], stats: ParseStats | None = None) -> Iterator[LogEntry]:
    """Yield the well-formed entries of ``lines``; rejections are tallied in ``stats``."""
    if stats is None:
        stats = ParseStats()
    for line in lines:
        try:
            entry = parse_log_line(line)
        except RejectedLine as exc:
            stats.rejected[exc.reason] += 1
            continue
        stats.accepted += 1
        yield entry


def read_log_file(path: str | Path) -> tuple[list[LogEntry], ParseStats]:
    stats = ParseStats()
    with open(path, encoding="utf-8", newline="\n") as fh:
        entries = list(parse_log_stream(fh, stats))
    return entries, stats


def write_log(entries: Iterable[LogEntry], out: TextIO) -> None:
    for e in entries:
        out.write(e.to_line())


def bucket_entries(
    entries: Iterable[LogEntry], spec: PeriodSpec, stats: BucketStats | None = None
) -> dict[tuple[str, int], EntityPeriodBundle]:
    """Group entries by (entity, period), keeping each distinct resource text once.

    Documents keep first-seen order. Out-of-range timestamps are counted in
    ``stats.dropped``.
    """
    if stats is None:
        stats = BucketStats()
    docs: dict[tuple[str, int], dict[str, None]] = {}
    raw: Counter = Counter()
    for e in entries:
        stats.total += 1
        p = spec.index(e.timestamp)
        if p is None:
            stats.dropped += 1
            continue
        key = (e.entity_id, p)
        docs.setdefault(key, {})[e.resource_text] = None
        raw[key] += 1
    return {
        key: EntityPeriodBundle(key[0], key[1], tuple(d), raw[key])
        for key, d in sorted(docs.items())
    }


def bundles_to_json(bundles: dict[tuple[str, int], EntityPeriodBundle]) -> list[dict]:
    return [
        {"entity": b.entity_id, "period": b.period_index, "raw_count": b.raw_count,
         "documents": list(b.documents)}
        for b in bundles.values()
    ]


def bundles_from_json(rows: list[dict]) -> dict[tuple[str, int], EntityPeriodBundle]:
    out = {}
    for r in rows:
        b = EntityPeriodBundle(r["entity"], int(r["period"]), tuple(r["documents"]), int(r["raw_count"]))
        out[(b.entity_id, b.period_index)] = b
    return out


# --------------------------------------------------------------------------
# synthetic logs


@dataclass
class SynthConfig:
    entity_count: int = 2000
    topic_count: int = 64
    period_count: int = 11
    concentration: float = 0.3
    activity_mean: float = 20.0
    trend_fraction: float = 0.2
    trend_strength: float = 1.0
    burst_radius: float = 0.15
    burst_rate: float = 0.3
    burst_amplitude: float = 1.0
    burst_duration: int = 4
    burst_drift: float = 0.12
    noise: float = 0.3
    word_overlap: float = 0.4
    overlap_radius: float = 0.2
    block_size: int = 20
    resources_per_topic: int = 200
    min_words: int = 3
    max_words: int = 7
    origin: int = 1_600_000_000
    period_length: int = 86_400
    seed: int = 0

    def __post_init__(self):
        for name in ("entity_count", "topic_count", "period_count", "block_size",
                     "resources_per_topic", "min_words", "period_length"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("trend_fraction", "burst_rate", "word_overlap"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.max_words < self.min_words:
            raise ConfigError("max_words < min_words")
        if self.noise < 0 or self.concentration <= 0 or self.burst_duration < 1 or self.burst_drift < 0:
            raise ConfigError("noise and burst_drift must be >= 0, concentration > 0, burst_duration >= 1")

    def period_spec(self) -> PeriodSpec:
        return PeriodSpec(self.origin, self.period_length, self.period_count)


@dataclass
class GroundTruth:
    """What the generator knows: per-entity intensities and the latent topic geometry."""

    entity_ids: list[str]
    intensity: np.ndarray          # (entities, periods, topics)
    counts: np.ndarray             # (entities, periods, topics) activity counts drawn
    word_blocks: list[list[str]]   # topic -> its own vocabulary block
    mixing: np.ndarray             # (topics, topics) block-draw probabilities
    positions: np.ndarray          # (topics, 2) latent layout in the unit square

    def topic_word_distribution(self, vocab_words: list[str]) -> np.ndarray:
        """Generator topic-word distributions over ``vocab_words`` (missing words get 0)."""
        col = {w: i for i, w in enumerate(vocab_words)}
        K = len(self.word_blocks)
        out = np.zeros((K, len(vocab_words)))
        for u, block in enumerate(self.word_blocks):
            for w in block:
                if w in col:
                    out[:, col[w]] += self.mixing[:, u] / len(block)
        return out

    def to_json(self) -> dict:
        return {
            "entities": {
                e: np.round(self.intensity[i], 6).tolist() for i, e in enumerate(self.entity_ids)
            },
            "counts": {e: self.counts[i].astype(int).tolist() for i, e in enumerate(self.entity_ids)},
            "word_blocks": self.word_blocks,
            "mixing": self.mixing.tolist(),
            "positions": self.positions.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "GroundTruth":
        ids = list(data["entities"])
        return cls(
            entity_ids=ids,
            intensity=np.array([data["entities"][e] for e in ids], dtype=float),
            counts=np.array([data["counts"][e] for e in ids], dtype=float),
            word_blocks=[list(b) for b in data["word_blocks"]],
            mixing=np.array(data["mixing"], dtype=float),
            positions=np.array(data["positions"], dtype=float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "GroundTruth":
        return cls.from_json(json.loads(Path(path).read_text()))


def _mixing_matrix(positions: np.ndarray, overlap: float, radius: float) -> np.ndarray:
    K = len(positions)
    d2 = ((positions[:, None, :] - positions[None, :, :]) ** 2).sum(-1)
    g = np.exp(-d2 / (2 * radius**2))
    np.fill_diagonal(g, 0.0)
    rows = g.sum(1, keepdims=True)
    rows[rows == 0] = 1.0
    m = overlap * g / rows
    if K == 1:
        return np.ones((1, 1))
    m[np.arange(K), np.arange(K)] = 1.0 - overlap
    return m / m.sum(1, keepdims=True)


def generate_synthetic_logs(cfg: SynthConfig) -> tuple[list[LogEntry], GroundTruth]:
    """Draw a log stream whose per-topic activity has trends and spatial bursts.

    Intensity of topic t for entity e in period p is

        activity_e * (pref_{e,t} * ramp_{e,t}(p) + sum of active bursts' kernel share at t)

    and the number of activities is round(intensity * lognormal noise). Every
    activity hits one resource from its topic's fixed pool; resources are bags
    of words from the topic's own block, with a ``word_overlap`` share borrowed
    from blocks of topics that sit nearby in the latent layout.
    """
    rng = np.random.default_rng(cfg.seed)
    E, K, P = cfg.entity_count, cfg.topic_count, cfg.period_count

    positions = rng.random((K, 2))
    mixing = _mixing_matrix(positions, cfg.word_overlap, cfg.overlap_radius)
    blocks = [[f"t{t:03d}w{j:03d}" for j in range(cfg.block_size)] for t in range(K)]

    resources: list[list[str]] = []
    for t in range(K):
        pool = []
        for _ in range(cfg.resources_per_topic):
            n = int(rng.integers(cfg.min_words, cfg.max_words + 1))
            src = rng.choice(K, size=n, p=mixing[t])
            pick = rng.integers(cfg.block_size, size=n)
            pool.append(" ".join(blocks[u][j] for u, j in zip(src, pick)))
        resources.append(pool)

    activity = cfg.activity_mean * rng.lognormal(-0.125, 0.5, size=E)
    pref = rng.dirichlet(np.full(K, cfg.concentration), size=E)

    frac = np.arange(P) / max(P - 1, 1)
    trending = rng.random((E, K)) < cfg.trend_fraction
    slope = cfg.trend_strength * rng.uniform(-0.9, 2.0, size=(E, K)) * trending
    ramp = np.maximum(0.0, 1.0 + slope[:, None, :] * frac[None, :, None])   # (E, P, K)

    burst = np.zeros((E, P, K))
    if cfg.burst_rate > 0 and cfg.burst_amplitude > 0:
        starts = rng.random((E, P)) < cfg.burst_rate
        centers = rng.random((E, P, 2))
        if cfg.burst_drift > 0:
            heading = rng.uniform(0.0, 2 * np.pi, size=(E, P))
            velocity = cfg.burst_drift * np.stack([np.cos(heading), np.sin(heading)], axis=-1)
        else:
            velocity = np.zeros((E, P, 2))
        for e, p0 in zip(*np.nonzero(starts)):
            # the burst center moves by a fixed step each period it stays active
            for j in range(min(cfg.burst_duration, P - p0)):
                d2 = ((positions - centers[e, p0] - j * velocity[e, p0]) ** 2).sum(1)
                g = np.exp(-d2 / (2 * cfg.burst_radius**2))
                burst[e, p0 + j] += cfg.burst_amplitude * g / g.sum()

    intensity = activity[:, None, None] * (pref[:, None, :] * ramp + burst)
    if cfg.noise > 0:
        jitter = rng.lognormal(-0.5 * cfg.noise**2, cfg.noise, size=intensity.shape)
    else:
        jitter = np.ones_like(intensity)
    counts = np.rint(intensity * jitter).astype(np.int64)

    entity_ids = [f"ent{e:05d}" for e in range(E)]
    rows: list[tuple[int, str, str]] = []
    for e, p, t in zip(*np.nonzero(counts)):
        n = int(counts[e, p, t])
        picks = rng.integers(cfg.resources_per_topic, size=n)
        offsets = rng.integers(cfg.period_length, size=n)
        base = cfg.origin + int(p) * cfg.period_length
        pool = resources[t]
        for j, off in zip(picks, offsets):
            rows.append((base + int(off), entity_ids[e], pool[j]))
    rows.sort()
    entries = [LogEntry(eid, ts, text) for ts, eid, text in rows]
    truth = GroundTruth(entity_ids, intensity, counts.astype(float), blocks, mixing, positions)
    return entries, truth
