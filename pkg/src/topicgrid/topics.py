"""LDA topic model fitted by collapsed Gibbs sampling, with fold-in inference.

Sampling kernels are compiled with numba; everything around them is numpy.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .errors import ConfigError, DataError
from .tensorio import read_manifest, read_raw, write_manifest, write_raw

DEFAULT_BETA = 0.01
DEFAULT_FIT_SWEEPS = 200
DEFAULT_FOLD_SWEEPS = 30
DEFAULT_FOLD_AVERAGE = 10


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(self.words)})

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def id(self, word: str) -> int:
        return self._index[word]

    def encode(self, text: str) -> np.ndarray:
        """Token ids of ``text``; out-of-vocabulary tokens are dropped."""
        idx = self._index
        return np.array([idx[w] for w in tokenize(text) if w in idx], dtype=np.int64)


def build_vocabulary(corpus: Iterable[str], min_count: int = 1) -> Vocabulary:
    counts = Counter()
    n_docs = 0
    for doc in corpus:
        counts.update(tokenize(doc))
        n_docs += 1
    if n_docs == 0:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    kept = [(w, c) for w, c in counts.items() if c >= min_count]
    if not kept:
        raise ConfigError(f"vocabulary is empty after min_count={min_count} filtering")
    kept.sort(key=lambda wc: (-wc[1], wc[0]))
    return Vocabulary(tuple(w for w, _ in kept))


@dataclass
class LdaModel:
    K: int
    alpha: float
    beta: float
    phi: np.ndarray
    vocabulary: Vocabulary
    seed: int = 0

    @property
    def V(self) -> int:
        return len(self.vocabulary)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        write_manifest(directory, {
            "K": self.K, "alpha": self.alpha, "beta": self.beta, "V": self.V,
            "seed": self.seed, "vocabulary": list(self.vocabulary.words),
            "phi": "phi.f64", "dtype": "<f8", "layout": "row-major [topic][word]",
        })
        write_raw(directory / "phi.f64", self.phi)

    @classmethod
    def load(cls, directory: str | Path) -> "LdaModel":
        directory = Path(directory)
        m = read_manifest(directory)
        phi = read_raw(directory / m["phi"], (m["K"], m["V"]))
        return cls(m["K"], m["alpha"], m["beta"], phi, Vocabulary(tuple(m["vocabulary"])), m.get("seed", 0))


@dataclass
class GibbsState:
    """Token-level sampler state, exposed to ``fit_lda`` callbacks."""

    words: np.ndarray
    docs: np.ndarray
    z: np.ndarray
    doc_topic: np.ndarray
    topic_word: np.ndarray
    topic_total: np.ndarray


@numba.njit(cache=True)
def _gibbs_sweep(words, docs, z, ndk, nkw, nk, alpha, beta, vbeta, u):
    K = nk.shape[0]
    p = np.empty(K)
    for i in range(words.shape[0]):
        w = words[i]
        d = docs[i]
        k = z[i]
        ndk[d, k] -= 1
        nkw[k, w] -= 1
        nk[k] -= 1
        total = 0.0
        for t in range(K):
            total += (ndk[d, t] + alpha) * (nkw[t, w] + beta) / (nk[t] + vbeta)
            p[t] = total
        r = u[i] * total
        k = 0
        while k < K - 1 and p[k] <= r:
            k += 1
        z[i] = k
        ndk[d, k] += 1
        nkw[k, w] += 1
        nk[k] += 1


@numba.njit(cache=True)
def _splitmix(state):
    state = state + np.uint64(0x9E3779B97F4A7C15)
    x = state
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    x = x ^ (x >> np.uint64(31))
    return state, (x >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _fold_in(offsets, words, seeds, phi, alpha, sweeps, n_avg, out):
    K = phi.shape[0]
    p = np.empty(K)
    nd = np.empty(K)
    for d in range(offsets.shape[0] - 1):
        lo = offsets[d]
        hi = offsets[d + 1]
        L = hi - lo
        if L == 0:
            for t in range(K):
                out[d, t] = 1.0 / K
            continue
        state = seeds[d]
        z = np.empty(L, np.int64)
        nd[:] = 0.0
        for j in range(L):
            state, u = _splitmix(state)
            k = min(int(u * K), K - 1)
            z[j] = k
            nd[k] += 1.0
        acc = np.zeros(K)
        for s in range(sweeps):
            for j in range(L):
                w = words[lo + j]
                nd[z[j]] -= 1.0
                total = 0.0
                for t in range(K):
                    total += phi[t, w] * (nd[t] + alpha)
                    p[t] = total
                state, u = _splitmix(state)
                r = u * total
                k = 0
                while k < K - 1 and p[k] <= r:
                    k += 1
                z[j] = k
                nd[k] += 1.0
            if s >= sweeps - n_avg:
                for t in range(K):
                    acc[t] += (nd[t] + alpha) / (L + K * alpha)
        norm = acc.sum()
        for t in range(K):
            out[d, t] = acc[t] / norm


def _flatten(corpus: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(d) for d in corpus], dtype=np.int64)
    words = np.concatenate([np.asarray(d, dtype=np.int64) for d in corpus]) if len(corpus) else np.zeros(0, np.int64)
    docs = np.repeat(np.arange(len(corpus), dtype=np.int64), lengths)
    return words, docs


def fit_lda(
    corpus: Sequence[np.ndarray],
    vocabulary: Vocabulary,
    K: int,
    alpha: float | None = None,
    beta: float = DEFAULT_BETA,
    iterations: int = DEFAULT_FIT_SWEEPS,
    seed: int = 0,
    callback: Callable[[int, GibbsState], None] | None = None,
) -> LdaModel:
    """Fit LDA to ``corpus`` (token-id arrays) with collapsed Gibbs sampling.

    ``alpha`` defaults to 1/K; log documents are a handful of tokens long and a
    larger prior drowns them. ``callback(sweep, state)`` runs after every sweep.
    """
    if K < 2:
        raise ConfigError("K must be at least 2")
    if alpha is None:
        alpha = 1.0 / K
    words, docs = _flatten(corpus)
    if words.size == 0:
        raise DataError("cannot fit LDA on an empty corpus")
    V = len(vocabulary)
    if words.max() >= V or words.min() < 0:
        raise DataError("corpus token ids fall outside the vocabulary")

    rng = np.random.default_rng(seed)
    z = rng.integers(K, size=words.size).astype(np.int64)
    ndk = np.zeros((len(corpus), K), dtype=np.int64)
    nkw = np.zeros((K, V), dtype=np.int64)
    np.add.at(ndk, (docs, z), 1)
    np.add.at(nkw, (z, words), 1)
    nk = nkw.sum(1)
    state = GibbsState(words, docs, z, ndk, nkw, nk)
    for sweep in range(iterations):
        u = rng.random(words.size)
        _gibbs_sweep(words, docs, z, ndk, nkw, nk, float(alpha), float(beta), V * float(beta), u)
        if callback is not None:
            callback(sweep, state)
    phi = (nkw + beta) / (nk[:, None] + V * beta)
    return LdaModel(K, float(alpha), float(beta), phi, vocabulary, seed)


@dataclass
class ActivityRelevance:
    theta: np.ndarray
    empty: bool = False


def document_seed(text: str, salt: int = 0) -> int:
    key = f"{salt}\x00{' '.join(tokenize(text))}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def infer_relevance_many(
    model: LdaModel,
    documents: Sequence[str],
    sweeps: int = DEFAULT_FOLD_SWEEPS,
    n_average: int = DEFAULT_FOLD_AVERAGE,
    salt: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Fold-in topic proportions for each document: (D, K) array and empty-document flags.

    Each document's sampler is seeded from a hash of its tokens, so a given
    text always gets the same relevance vector regardless of batch.
    """
    if not 1 <= n_average <= sweeps:
        raise ConfigError("need 1 <= n_average <= sweeps")
    encoded = [model.vocabulary.encode(d) for d in documents]
    words, _ = _flatten(encoded)
    offsets = np.zeros(len(encoded) + 1, dtype=np.int64)
    np.cumsum([len(e) for e in encoded], out=offsets[1:])
    seeds = np.array([document_seed(d, salt) for d in documents], dtype=np.uint64)
    out = np.empty((len(encoded), model.K))
    _fold_in(offsets, words, seeds, np.ascontiguousarray(model.phi), model.alpha, sweeps, n_average, out)
    return out, np.diff(offsets) == 0


def infer_relevance(model: LdaModel, document: str, **kwargs) -> ActivityRelevance:
    theta, empty = infer_relevance_many(model, [document], **kwargs)
    return ActivityRelevance(theta[0], bool(empty[0]))


def match_topics(estimated: np.ndarray, reference: np.ndarray) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Greedily pair estimated and reference topic rows by cosine similarity.

    Returns (estimated, reference) index pairs and the matched cosines.
    """
    a = estimated / np.linalg.norm(estimated, axis=1, keepdims=True)
    b = reference / np.linalg.norm(reference, axis=1, keepdims=True)
    cos = a @ b.T
    work = cos.copy()
    pairs, sims = [], []
    for _ in range(min(work.shape)):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        pairs.append((int(i), int(j)))
        sims.append(cos[i, j])
        work[i, :] = -np.inf
        work[:, j] = -np.inf
    return pairs, np.array(sims)
