"""Place topics on a square grid so metric vectors become images.

Topics are embedded in 2D by PCA of their Hellinger-transformed word
distributions, then assigned to grid cells by split-diffuse: recursive
median partitions that alternate with the shape of the remaining rectangle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, ShapeError


@dataclass
class TopicEmbedding2D:
    points: np.ndarray        # (K, 2)
    axes: np.ndarray          # (D, 2) orthonormal columns
    eigenvalues: np.ndarray   # (2,), descending
    total_variance: float = 0.0

    @property
    def K(self) -> int:
        return len(self.points)


def hellinger_features(phi: np.ndarray) -> np.ndarray:
    return np.sqrt(np.clip(phi, 0.0, None))


def pca_embed(features: np.ndarray) -> TopicEmbedding2D:
    """Project the rows of ``features`` onto their two leading principal axes.

    Covariance uses the 1/(K-1) normalization. Each axis is signed so its
    largest-magnitude loading is positive.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 2:
        raise ConfigError(f"pca_embed needs a K x D matrix with K, D >= 2, got {X.shape}")
    centered = X - X.mean(0)
    cov = centered.T @ centered / (X.shape[0] - 1)
    try:
        vals, vecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(vals)[::-1][:2]
    axes = vecs[:, order]
    for j in range(2):
        lead = np.argmax(np.abs(axes[:, j]))
        if axes[lead, j] < 0:
            axes[:, j] = -axes[:, j]
    return TopicEmbedding2D(centered @ axes, axes, vals[order].copy(), float(np.trace(cov)))


@dataclass(frozen=True)
class GridSpec:
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("grid side k must be >= 1")

    @property
    def cells(self) -> int:
        return self.k * self.k

    @classmethod
    def for_topics(cls, K: int) -> "GridSpec":
        k = math.isqrt(K)
        if k * k != K:
            raise ConfigError(f"topic count {K} is not a perfect square")
        return cls(k)


@dataclass
class Split:
    """One partition step: ``low``/``high`` topic ids split along embedding ``axis``."""

    axis: int
    low: tuple[int, ...]
    high: tuple[int, ...]


@dataclass
class GridAssignment:
    k: int
    cells: np.ndarray                      # (K, 2) int: topic -> (row, col)
    splits: list[Split] = field(default_factory=list, repr=False)

    @property
    def K(self) -> int:
        return len(self.cells)

    def topic_grid(self) -> np.ndarray:
        """(k, k) array holding the topic id placed in each cell."""
        g = np.full((self.k, self.k), -1, dtype=np.int64)
        g[self.cells[:, 0], self.cells[:, 1]] = np.arange(self.K)
        return g

    def to_json(self) -> list[list[int]]:
        return [[t, int(r), int(c)] for t, (r, c) in enumerate(self.cells)]

    @classmethod
    def from_json(cls, rows: list[list[int]]) -> "GridAssignment":
        rows = sorted(rows)
        K = len(rows)
        k = math.isqrt(K)
        if k * k != K or [r[0] for r in rows] != list(range(K)):
            raise ConfigError("assignment file must list topics 0..K-1 with K a perfect square")
        out = cls(k, np.array([[r[1], r[2]] for r in rows], dtype=np.int64))
        validate_assignment(out)
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "GridAssignment":
        return cls.from_json(json.loads(Path(path).read_text()))

    @classmethod
    def identity(cls, k: int) -> "GridAssignment":
        t = np.arange(k * k)
        return cls(k, np.stack([t // k, t % k], axis=1))


def validate_assignment(a: GridAssignment) -> None:
    cells = a.cells
    ok = (cells.shape == (a.k * a.k, 2) and cells.min() >= 0 and cells.max() < a.k
          and len({(int(r), int(c)) for r, c in cells}) == a.k * a.k)
    if not ok:
        raise ConfigError("assignment is not a bijection onto the grid")


def _rank(points: np.ndarray, ids: np.ndarray, axis: int) -> np.ndarray:
    # ascending coordinate, ties by topic id
    return ids[np.lexsort((ids, points[ids, axis]))]


def split_diffuse_map(embedding: TopicEmbedding2D | np.ndarray, grid: GridSpec) -> GridAssignment:
    """Assign K = k*k embedded topics to grid cells.

    Each rectangle of a x b cells is cut across its wider side (columns on a
    tie) into floor-half and the remainder. Points are ranked along the
    matching embedding axis (axis 0 for columns, axis 1 for rows, ties by
    topic id) and the lowest ``cells-in-low-part`` ranks go to the low part.
    The low part of a column cut is the left columns; the low part of a row
    cut is the bottom rows, so larger axis-1 values sit nearer row 0 as in a
    plot with y pointing up.
    """
    points = embedding.points if isinstance(embedding, TopicEmbedding2D) else np.asarray(embedding, float)
    K = len(points)
    if K != grid.cells:
        raise ConfigError(f"{K} topics cannot fill a {grid.k}x{grid.k} grid")
    if points.ndim != 2 or points.shape[1] != 2 or not np.all(np.isfinite(points)):
        raise ConfigError("embedding must be a finite K x 2 array")

    cells = np.empty((K, 2), dtype=np.int64)
    splits: list[Split] = []
    stack = [(np.arange(K), 0, 0, grid.k, grid.k)]
    while stack:
        ids, r0, c0, rows, cols = stack.pop()
        if rows * cols == 1:
            cells[ids[0]] = (r0, c0)
            continue
        if cols >= rows:
            left = cols // 2
            ranked = _rank(points, ids, 0)
            n_low = rows * left
            low, high = ranked[:n_low], ranked[n_low:]
            splits.append(Split(0, tuple(low.tolist()), tuple(high.tolist())))
            stack.append((high, r0, c0 + left, rows, cols - left))
            stack.append((low, r0, c0, rows, left))
        else:
            top = rows // 2
            ranked = _rank(points, ids, 1)
            n_low = (rows - top) * cols
            low, high = ranked[:n_low], ranked[n_low:]
            splits.append(Split(1, tuple(low.tolist()), tuple(high.tolist())))
            stack.append((low, r0 + top, c0, rows - top, cols))
            stack.append((high, r0, c0, top, cols))
    return GridAssignment(grid.k, cells, splits)


def apply_assignment(vector: np.ndarray, assignment: GridAssignment) -> np.ndarray:
    """Scatter a length-K vector (or a stack of them on leading axes) into k x k frames."""
    vector = np.asarray(vector, dtype=float)
    if vector.shape[-1] != assignment.K:
        raise ShapeError("metric vector", (assignment.K,), vector.shape[-1:])
    frame = np.empty(vector.shape[:-1] + (assignment.k, assignment.k))
    frame[..., assignment.cells[:, 0], assignment.cells[:, 1]] = vector
    return frame


def invert_assignment(frame: np.ndarray, assignment: GridAssignment) -> np.ndarray:
    """Gather the topic vector back out of a frame (or a stack of frames)."""
    frame = np.asarray(frame, dtype=float)
    if frame.shape[-2:] != (assignment.k, assignment.k):
        raise ShapeError("metric frame", (assignment.k, assignment.k), frame.shape[-2:])
    return frame[..., assignment.cells[:, 0], assignment.cells[:, 1]]
