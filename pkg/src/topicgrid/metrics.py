"""Per-entity, per-period topical volume metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError
from .loglab import EntityPeriodBundle, PeriodSpec
from .tensorio import dump_tensor, load_tensor


class MissingRelevance(DataError):
    pass


@dataclass
class RelevanceTable:
    """Relevance vectors for a fixed set of documents, one row per document."""

    documents: list[str]
    theta: np.ndarray

    def __post_init__(self):
        self._row = {d: i for i, d in enumerate(self.documents)}

    def __contains__(self, doc: str) -> bool:
        return doc in self._row

    def __getitem__(self, doc: str) -> np.ndarray:
        return self.theta[self._row[doc]]

    def rows(self, docs: Sequence[str]) -> np.ndarray:
        try:
            return np.fromiter((self._row[d] for d in docs), dtype=np.int64, count=len(docs))
        except KeyError as exc:
            raise MissingRelevance(f"no relevance vector for document {exc.args[0]!r}") from None

    @property
    def K(self) -> int:
        return self.theta.shape[1]


@dataclass(frozen=True)
class TopicalMetricVector:
    entity_id: str
    period_index: int
    values: np.ndarray


@dataclass
class MetricSeries:
    entity_id: str
    values: np.ndarray     # (periods, K)
    first_period: int = 0

    def __len__(self) -> int:
        return len(self.values)

    @property
    def vectors(self) -> Iterator[TopicalMetricVector]:
        for i, v in enumerate(self.values):
            yield TopicalMetricVector(self.entity_id, self.first_period + i, v)


def topical_volume(
    bundle: EntityPeriodBundle, relevances: Mapping[str, np.ndarray] | RelevanceTable, t: int
) -> float:
    total = 0.0
    for doc in bundle.documents:
        try:
            total += float(relevances[doc][t])
        except KeyError:
            raise MissingRelevance(f"no relevance vector for document {doc!r}") from None
    return float(np.log1p(total))


def volume_vector(bundle: EntityPeriodBundle, table: RelevanceTable) -> np.ndarray:
    """Topical volume for every topic at once."""
    if not bundle.documents:
        return np.zeros(table.K)
    return np.log1p(table.theta[table.rows(bundle.documents)].sum(0))


def build_metric_series(
    bundles: Mapping[tuple[str, int], EntityPeriodBundle],
    relevances: RelevanceTable,
    K: int,
    spec: PeriodSpec,
    entities: Sequence[str] | None = None,
) -> dict[str, MetricSeries]:
    """One rectangular (spec.count, K) series per entity; absent periods are zero."""
    if relevances.K != K:
        raise DataError(f"relevance vectors have {relevances.K} topics, expected {K}")
    if entities is None:
        entities = sorted({e for e, _ in bundles})
    out = {e: MetricSeries(e, np.zeros((spec.count, K))) for e in entities}
    for (e, p), bundle in bundles.items():
        if e in out and 0 <= p < spec.count:
            out[e].values[p] = volume_vector(bundle, relevances)
    return out


def metric_tensor(series: Mapping[str, MetricSeries]) -> tuple[list[str], np.ndarray]:
    entities = list(series)
    if not entities:
        return [], np.zeros((0, 0, 0))
    return entities, np.stack([series[e].values for e in entities])


def dump_metrics(directory: str | Path, entities: list[str], tensor: np.ndarray, first_period: int = 0,
                 layout: str = "[entity][period][topic]") -> None:
    E, P = tensor.shape[:2]
    dump_tensor(directory, tensor, E=E, P=P, K=int(np.prod(tensor.shape[2:])),
                entities=entities, periods=[first_period, first_period + P], layout=layout)


def load_metrics(directory: str | Path) -> tuple[list[str], np.ndarray, dict]:
    tensor, manifest = load_tensor(directory)
    return manifest["entities"], tensor, manifest
