"""Pipeline stages and the multi-architecture experiment driver."""

from __future__ import annotations

import copy
import logging
import statistics
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ConfigError, TopicGridError
from ..layout import GridAssignment, GridSpec, TopicEmbedding2D, apply_assignment, hellinger_features, pca_embed, split_diffuse_map
from ..loglab import (
    BucketStats, EntityPeriodBundle, GroundTruth, LogEntry, ParseStats, PeriodSpec,
    bucket_entries, generate_synthetic_logs,
)
from ..metrics import RelevanceTable, build_metric_series, metric_tensor
from ..models import Model, build_model, predict_batched, train_epoch
from ..neurons import LOSSES, Adam
from ..topics import LdaModel, build_vocabulary, fit_lda, infer_relevance_many, match_topics
from .config import PipelineConfig, SplitSpec

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


class StageError(TopicGridError):
    """Wraps a failure with the name of the stage it happened in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.exit_code = getattr(cause, "exit_code", 2)


# --------------------------------------------------------------------------
# data stages


def benchmark_corpus(bundles: Mapping[tuple[str, int], EntityPeriodBundle], period: int) -> list[str]:
    """All unique documents of every entity in the benchmark period."""
    return [d for (_, p), b in bundles.items() if p == period for d in b.documents]


def fit_topics(bundles, cfg: PipelineConfig) -> LdaModel:
    tc = cfg.topics
    docs = benchmark_corpus(bundles, tc.benchmark_period)
    vocab = build_vocabulary(docs, tc.min_count)
    corpus = [vocab.encode(d) for d in docs]
    return fit_lda(corpus, vocab, tc.K, tc.alpha, tc.beta, tc.iterations, cfg.stage_seed("lda"))


def infer_topics(model: LdaModel, bundles, cfg: PipelineConfig) -> RelevanceTable:
    docs = sorted({d for b in bundles.values() for d in b.documents})
    theta, _ = infer_relevance_many(model, docs, cfg.topics.fold_sweeps, cfg.topics.fold_average,
                                    salt=cfg.stage_seed("fold-in"))
    return RelevanceTable(docs, theta)


def compute_layout(model: LdaModel) -> tuple[TopicEmbedding2D, GridAssignment]:
    emb = pca_embed(hellinger_features(model.phi))
    return emb, split_diffuse_map(emb, GridSpec.for_topics(model.K))


# --------------------------------------------------------------------------
# splits


@dataclass
class SampleSet:
    entities: list[str]
    X: np.ndarray              # (n, T, k, k)
    Y: np.ndarray              # (n, k, k)
    input_periods: tuple[int, int]
    target_period: int

    def __len__(self) -> int:
        return len(self.entities)


@dataclass
class Splits:
    train: SampleSet
    val: SampleSet
    test: SampleSet

    def __getitem__(self, name: str) -> SampleSet:
        return getattr(self, name)

    def to_json(self) -> dict[str, Any]:
        return {
            name: {"entities": s.entities, "input_periods": list(s.input_periods), "target_period": s.target_period}
            for name in SPLITS for s in [self[name]]
        }


def split_counts(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    return n_train, n_val, n - n_train - n_val


def make_splits(
    entities: Sequence[str], frames: np.ndarray, spec: SplitSpec, T: int, seed: int
) -> Splits:
    """Entity-wise split; train/val predict period T from [0, T), test predicts s+T from [s, s+T)."""
    n_periods = frames.shape[1]
    s = spec.shift
    if n_periods < s + T + 1:
        raise ConfigError(f"series of {n_periods} periods too short for T={T} and shift {s}")
    order = np.random.default_rng(seed).permutation(len(entities))
    n_train, n_val, _ = split_counts(len(entities), spec)
    parts = {"train": order[:n_train], "val": order[n_train:n_train + n_val], "test": order[n_train + n_val:]}

    def build(idx, start):
        idx = np.sort(idx)
        return SampleSet([entities[i] for i in idx], frames[idx, start:start + T], frames[idx, start + T],
                         (start, start + T), start + T)

    return Splits(build(parts["train"], 0), build(parts["val"], 0), build(parts["test"], s))


def splits_from_json(data: Mapping[str, Any], entities: Sequence[str], frames: np.ndarray) -> Splits:
    row = {e: i for i, e in enumerate(entities)}
    sets = {}
    for name in SPLITS:
        d = data[name]
        idx = np.array([row[e] for e in d["entities"]], dtype=np.int64)
        a, b = d["input_periods"]
        sets[name] = SampleSet(list(d["entities"]), frames[idx, a:b], frames[idx, d["target_period"]],
                               (a, b), d["target_period"])
    return Splits(**sets)


# --------------------------------------------------------------------------
# evaluation


def evaluate(model: Model, X: np.ndarray, Y: np.ndarray, loss: str = "rle", batch_size: int = 256) -> float:
    """Mean per-sample loss with no parameter update."""
    if len(X) == 0:
        raise ConfigError("evaluate needs at least one sample")
    pred = predict_batched(model, X, batch_size)
    fn = LOSSES[loss]
    per_sample = [fn(pred[i], Y[i])[0] for i in range(len(X))]
    return float(np.mean(per_sample))


def prediction_gain(baseline_loss: float, model_loss: float) -> float:
    if not baseline_loss > 0:
        raise ConfigError(f"baseline loss must be positive, got {baseline_loss}")
    return (baseline_loss - model_loss) / baseline_loss


# --------------------------------------------------------------------------
# training


@dataclass
class ArchResult:
    arch: str
    n_params: int
    history: list[dict[str, float]]
    epoch_seconds: list[float]
    best_epoch: int
    model: Model = field(repr=False)

    @property
    def best(self) -> dict[str, float]:
        return self.history[self.best_epoch - 1]


def train_architecture(
    arch: str,
    cfg: PipelineConfig,
    splits: Splits,
    on_epoch: Callable[[str, dict], None] | None = None,
) -> ArchResult:
    """Train one architecture, scoring every split after each epoch.

    The returned model holds the parameters of the best-validation epoch.
    """
    mcfg = cfg.model.with_arch(arch)
    model = build_model(mcfg)
    opt = Adam(lr=cfg.train.lr)
    history, seconds = [], []
    best_val, best_epoch, best_params = np.inf, 0, None
    tr, va, te = splits.train, splits.val, splits.test
    for epoch in range(1, cfg.train.epochs + 1):
        rep = train_epoch(model, tr.X, tr.Y, opt, epoch=epoch, batch_size=cfg.train.batch_size,
                          loss=cfg.train.loss, seed=cfg.stage_seed("shuffle"))
        seconds.append(rep.seconds)
        row = {
            "epoch": epoch,
            "train_loss": rep.mean_loss,
            "train_rle": evaluate(model, tr.X, tr.Y, "rle"),
            "val_rle": evaluate(model, va.X, va.Y, "rle"),
            "test_rle": evaluate(model, te.X, te.Y, "rle"),
            "test_mse": evaluate(model, te.X, te.Y, "mse"),
        }
        history.append(row)
        if row["val_rle"] < best_val:
            best_val, best_epoch = row["val_rle"], epoch
            best_params = copy.deepcopy(model.parameters())
        if on_epoch is not None:
            on_epoch(arch, row)
    for name, p in model.parameters().items():
        p[...] = best_params[name]
    return ArchResult(arch, model.n_params, history, seconds, best_epoch, model)


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    data: dict[str, Any]
    results: dict[str, ArchResult]

    def gains(self) -> dict[str, dict[str, float]]:
        """Prediction gain over the MLP at each model's best-validation epoch."""
        if "mlp" not in self.results:
            return {}
        base = self.results["mlp"].best
        out = {}
        for arch, res in self.results.items():
            out[arch] = {
                split: prediction_gain(base[f"{split}_rle"], res.best[f"{split}_rle"]) for split in SPLITS
            }
            out[arch]["test_mse"] = prediction_gain(base["test_mse"], res.best["test_mse"])
        return out

    def timing(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            arch: {"epoch_seconds": r.epoch_seconds, "median_epoch_seconds": statistics.median(r.epoch_seconds)}
            for arch, r in self.results.items()
        }
        if "lrcn" in self.results and "sccn" in self.results:
            ratio = out["sccn"]["median_epoch_seconds"] / out["lrcn"]["median_epoch_seconds"]
            out["sccn_over_lrcn"] = ratio
            out["lrcn_over_sccn_speedup"] = 1.0 / ratio
        return out

    def to_json(self) -> dict[str, Any]:
        """Deterministic content only; wall-clock numbers live in :meth:`timing`."""
        return {
            "config": self.config,
            "data": self.data,
            "models": {
                arch: {
                    "n_params": r.n_params,
                    "best_epoch": r.best_epoch,
                    "best": {k: v for k, v in r.best.items() if k != "epoch"},
                    "epochs": r.history,
                }
                for arch, r in self.results.items()
            },
            "gains_vs_mlp": self.gains(),
        }


@dataclass
class PipelineState:
    """Everything the experiment produced along the way."""

    cfg: PipelineConfig
    entries: list[LogEntry] | None = None
    truth: GroundTruth | None = None
    parse_stats: ParseStats | None = None
    bucket_stats: BucketStats | None = None
    bundles: dict | None = None
    lda: LdaModel | None = None
    relevance: RelevanceTable | None = None
    entities: list[str] | None = None
    metrics: np.ndarray | None = None
    embedding: TopicEmbedding2D | None = None
    assignment: GridAssignment | None = None
    frames: np.ndarray | None = None
    splits: Splits | None = None
    report: ExperimentReport | None = None
    data: dict[str, Any] = field(default_factory=dict)


def _stage(name: str, fn, *args, **kwargs):
    log.info("stage %s", name)
    try:
        return fn(*args, **kwargs)
    except TopicGridError as exc:
        if isinstance(exc, StageError):
            raise
        raise StageError(name, exc) from exc
    except (ValueError, KeyError, ArithmeticError, OSError) as exc:
        raise StageError(name, exc) from exc


def prepare_data(cfg: PipelineConfig, entries: list[LogEntry] | None = None,
                 truth: GroundTruth | None = None) -> PipelineState:
    """synth -> ingest -> LDA -> relevance -> metrics -> layout -> frames -> splits."""
    st = PipelineState(cfg)
    if entries is None:
        entries, truth = _stage("synth", generate_synthetic_logs, cfg.synth)
    st.entries, st.truth = entries, truth
    spec: PeriodSpec = cfg.period_spec()
    st.bucket_stats = BucketStats()
    st.bundles = _stage("ingest", bucket_entries, entries, spec, st.bucket_stats)
    st.lda = _stage("topics-fit", fit_topics, st.bundles, cfg)
    st.relevance = _stage("topics-infer", infer_topics, st.lda, st.bundles, cfg)
    series = _stage("metrics", build_metric_series, st.bundles, st.relevance, cfg.topics.K, spec)
    st.entities, st.metrics = metric_tensor(series)
    st.embedding, st.assignment = _stage("layout", compute_layout, st.lda)
    st.frames = apply_assignment(st.metrics, st.assignment)
    st.splits = _stage("split", make_splits, st.entities, st.frames, cfg.split, cfg.model.T,
                       cfg.stage_seed("split"))
    st.data = describe_data(st)
    return st


def describe_data(st: PipelineState) -> dict[str, Any]:
    d: dict[str, Any] = {
        "log_entries": len(st.entries) if st.entries is not None else None,
        "dropped_out_of_range": st.bucket_stats.dropped if st.bucket_stats else None,
        "bundles": len(st.bundles) if st.bundles is not None else None,
        "unique_documents": len(st.relevance.documents) if st.relevance else None,
        "vocabulary_size": st.lda.V if st.lda else None,
        "entities": len(st.entities) if st.entities is not None else None,
        "split_sizes": {s: len(st.splits[s]) for s in SPLITS} if st.splits else None,
        "test_target_period": st.splits.test.target_period if st.splits else None,
        "train_target_period": st.splits.train.target_period if st.splits else None,
        "pca_eigenvalues": st.embedding.eigenvalues.tolist() if st.embedding else None,
    }
    if st.truth is not None and st.lda is not None:
        ref = st.truth.topic_word_distribution(list(st.lda.vocabulary.words))
        _, sims = match_topics(st.lda.phi, ref)
        d["lda_recovery_cosine"] = {"min": float(sims.min()), "mean": float(sims.mean())}
    if st.metrics is not None:
        d["metric_mean"] = float(st.metrics.mean())
        d["metric_nonzero_fraction"] = float((st.metrics > 0).mean())
    return d


def run_experiment(cfg: PipelineConfig, on_epoch: Callable[[str, dict], None] | None = None,
                   state: PipelineState | None = None) -> PipelineState:
    """Full run: data stages, then every configured architecture on shared splits."""
    with threadpool_limits(limits=1):
        st = state if state is not None else prepare_data(cfg)
        results = {}
        for arch in cfg.train.archs:
            results[arch] = _stage(f"train-{arch}", train_architecture, arch, cfg, st.splits, on_epoch)
        st.report = ExperimentReport(cfg.to_dict(), st.data, results)
    return st
