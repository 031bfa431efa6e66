"""Sparse and dense chunk indexes and their score-fused combination.

The sparse channel is Okapi BM25 over lowercase word tokens. The dense
channel is exact cosine over unit-norm embeddings; no approximate search,
every query scores every chunk. Fusion min-max normalizes each channel
within the pooled candidates and blends with a single weight alpha. Ties
break by chunk id ascending so rankings are reproducible.
"""
from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import RetrievalError
from .jsonl import read_jsonl, write_jsonl

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_DIMENSION = 1024


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; punctuation splits, so "BM25-based" -> bm25, based."""
    return _TOKEN_RE.findall(text.lower())


def _id_text(item) -> tuple[str, str]:
    if isinstance(item, tuple):
        return item
    return item.id, item.text


# --- sparse ----------------------------------------------------------------


@dataclass
class SparseIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    avg_doc_length: float
    vocab_size: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    # token -> {chunk_id: tf}, derived from postings for O(1) scoring
    _tf: dict[str, dict[str, int]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._tf:
            self._tf = {t: dict(plist) for t, plist in self.postings.items()}

    def idf(self, token: str) -> float:
        plist = self.postings.get(token)
        if not plist:
            return 0.0
        n_docs = len(self.doc_lengths)
        n_t = len(plist)
        return math.log((n_docs - n_t + 0.5) / (n_t + 0.5) + 1.0)


def build_sparse_index(
    chunks: Iterable, k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> SparseIndex:
    """Build BM25 postings over (id, text) pairs or chunk objects."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for item in chunks:
        cid, text = _id_text(item)
        if cid in doc_lengths:
            raise RetrievalError(f"duplicate chunk id: {cid}")
        tokens = tokenize(text)
        doc_lengths[cid] = len(tokens)
        counts: dict[str, int] = {}
        for tok in tokens:
            counts[tok] = counts.get(tok, 0) + 1
        for tok in sorted(counts):
            postings.setdefault(tok, []).append((cid, counts[tok]))
    if not doc_lengths:
        raise RetrievalError("no chunks to index")
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return SparseIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=avg,
        vocab_size=len(postings),
        k1=k1,
        b=b,
    )


def bm25_score(index: SparseIndex, query_tokens: Sequence[str], chunk_id: str) -> float:
    """Okapi BM25 with the non-negative ln((N - n_t + 0.5)/(n_t + 0.5) + 1) idf.

    Additive over the query token multiset: a token appearing twice in the
    query contributes twice.
    """
    if chunk_id not in index.doc_lengths:
        raise RetrievalError(f"unknown chunk id: {chunk_id}")
    dl = index.doc_lengths[chunk_id]
    score = 0.0
    for tok in query_tokens:
        tf = index._tf.get(tok, {}).get(chunk_id, 0)
        if tf == 0:
            continue
        denom = tf + index.k1 * (1.0 - index.b + index.b * dl / index.avg_doc_length)
        score += index.idf(tok) * tf * (index.k1 + 1.0) / denom
    return score


def bm25_scores(index: SparseIndex, query_tokens: Sequence[str]) -> dict[str, float]:
    """Score every indexed chunk for the query; chunks with no hits score 0."""
    scores = {cid: 0.0 for cid in index.doc_lengths}
    for tok in query_tokens:
        plist = index.postings.get(tok)
        if not plist:
            continue
        idf = index.idf(tok)
        for cid, tf in plist:
            dl = index.doc_lengths[cid]
            denom = tf + index.k1 * (
                1.0 - index.b + index.b * dl / index.avg_doc_length
            )
            scores[cid] += idf * tf * (index.k1 + 1.0) / denom
    return scores


# --- dense -----------------------------------------------------------------


@dataclass
class DenseIndex:
    ids: list[str]
    matrix: np.ndarray  # (n, dimension) float64, unit-norm rows
    dimension: int = DEFAULT_DIMENSION

    def vector(self, chunk_id: str) -> np.ndarray:
        try:
            return self.matrix[self.ids.index(chunk_id)]
        except ValueError:
            raise RetrievalError(f"unknown chunk id: {chunk_id}") from None


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not math.isfinite(norm):
        raise RetrievalError("degenerate embedding: zero or non-finite norm")
    return vec / norm


def build_dense_index(
    ids: Sequence[str], vectors: np.ndarray, dimension: int = DEFAULT_DIMENSION
) -> DenseIndex:
    """Stack embeddings into a matrix, normalizing every row to unit length."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != len(ids):
        raise RetrievalError(
            f"need one vector per id, got shape {arr.shape} for {len(ids)} ids"
        )
    if arr.shape[1] != dimension:
        raise RetrievalError(
            f"dimension mismatch: vectors are {arr.shape[1]}-d, index wants {dimension}-d"
        )
    if len(set(ids)) != len(ids):
        raise RetrievalError("duplicate chunk ids in dense index")
    rows = np.stack([_unit(arr[i]) for i in range(arr.shape[0])]) if len(ids) else arr
    return DenseIndex(ids=list(ids), matrix=rows, dimension=dimension)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise RetrievalError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(_unit(a), _unit(b)))


def dense_scores(index: DenseIndex, query_vector: np.ndarray) -> dict[str, float]:
    """Exact cosine of the query against every indexed chunk."""
    q = _unit(np.asarray(query_vector, dtype=np.float64))
    if q.shape[0] != index.dimension:
        raise RetrievalError(
            f"query is {q.shape[0]}-d, index wants {index.dimension}-d"
        )
    # Row-at-a-time dot products: a whole-matrix gemv can round identical
    # rows differently (vectorized body vs remainder lanes), which would let
    # duplicate chunks escape the id tie-break.
    return {
        cid: float(np.dot(index.matrix[i], q)) for i, cid in enumerate(index.ids)
    }


# --- fusion ----------------------------------------------------------------


@dataclass(frozen=True)
class RetrievalConfig:
    alpha: float = 0.5
    k_cand: int = 50
    top_k: int = 5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise RetrievalError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.k_cand < 1:
            raise RetrievalError(f"k_cand must be >= 1, got {self.k_cand}")
        if not (1 <= self.top_k <= 2 * self.k_cand):
            raise RetrievalError(
                f"top_k must be in [1, 2*k_cand], got {self.top_k} with k_cand={self.k_cand}"
            )


@dataclass(frozen=True)
class ScoredCandidate:
    chunk_id: str
    s_bm25: float
    s_dense: float
    s_bm25_norm: float = 0.0
    s_dense_norm: float = 0.0
    s_hybrid: float = 0.0


def _top_ids(scores: Mapping[str, float], k: int) -> list[str]:
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [cid for cid, _ in ranked[:k]]


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        # constant channel: every candidate maps to the midpoint
        return [0.5] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def normalize_pool(candidates: Sequence[ScoredCandidate]) -> list[ScoredCandidate]:
    """Min-max normalize each channel within the pooled candidates."""
    if not candidates:
        return []
    bm25_norm = _minmax([c.s_bm25 for c in candidates])
    dense_norm = _minmax([c.s_dense for c in candidates])
    return [
        replace(c, s_bm25_norm=bm25_norm[i], s_dense_norm=dense_norm[i])
        for i, c in enumerate(candidates)
    ]


def fuse(candidates: Sequence[ScoredCandidate], alpha: float) -> list[ScoredCandidate]:
    """Blend normalized channels: alpha * dense + (1 - alpha) * bm25."""
    return [
        replace(c, s_hybrid=alpha * c.s_dense_norm + (1.0 - alpha) * c.s_bm25_norm)
        for c in candidates
    ]


def hybrid_retrieve(
    query: str,
    sparse: SparseIndex,
    dense: DenseIndex,
    query_vector: np.ndarray,
    cfg: RetrievalConfig,
) -> list[ScoredCandidate]:
    """Pool the top k_cand of each channel, normalize, fuse, rank.

    Returns the top_k candidates ordered by (-s_hybrid, chunk_id). Both
    indexes must cover the same chunk set.
    """
    sparse_ids = set(sparse.doc_lengths)
    if sparse_ids != set(dense.ids):
        raise RetrievalError("sparse and dense indexes cover different chunk sets")
    if not sparse_ids:
        raise RetrievalError("empty index")
    q_tokens = tokenize(query)
    s_bm25 = bm25_scores(sparse, q_tokens)
    s_dense = dense_scores(dense, query_vector)
    pool = set(_top_ids(s_bm25, cfg.k_cand)) | set(_top_ids(s_dense, cfg.k_cand))
    candidates = [
        ScoredCandidate(chunk_id=cid, s_bm25=s_bm25[cid], s_dense=s_dense[cid])
        for cid in sorted(pool)
    ]
    candidates = fuse(normalize_pool(candidates), cfg.alpha)
    candidates.sort(key=lambda c: (-c.s_hybrid, c.chunk_id))
    return candidates[: cfg.top_k]


# --- bundled retriever -----------------------------------------------------


class Retriever:
    """Sparse + dense indexes plus an embedder, queried as one unit."""

    def __init__(self, chunks, sparse: SparseIndex, dense: DenseIndex, embedder):
        self._chunks = {c.id: c for c in chunks}
        self.sparse = sparse
        self.dense = dense
        self.embedder = embedder

    @classmethod
    def build(
        cls,
        chunks,
        embedder,
        k1: float = DEFAULT_K1,
        b: float = DEFAULT_B,
        dimension: int = DEFAULT_DIMENSION,
    ) -> "Retriever":
        chunks = list(chunks)
        sparse = build_sparse_index(chunks, k1=k1, b=b)
        vectors = embedder.embed([c.text for c in chunks])
        dense = build_dense_index([c.id for c in chunks], vectors, dimension=dimension)
        return cls(chunks, sparse, dense, embedder)

    def chunk(self, chunk_id: str):
        if chunk_id not in self._chunks:
            raise RetrievalError(f"unknown chunk id: {chunk_id}")
        return self._chunks[chunk_id]

    def chunk_ids(self) -> list[str]:
        return list(self._chunks)

    def retrieve(self, query: str, cfg: RetrievalConfig) -> list[ScoredCandidate]:
        qv = np.asarray(self.embedder.embed([query]))[0]
        return hybrid_retrieve(query, self.sparse, self.dense, qv, cfg)


# --- persistence -----------------------------------------------------------

META_FILE = "meta.json"
POSTINGS_FILE = "postings.jsonl"
VECTORS_FILE = "vectors.jsonl"


def save_index(dir_path: str, sparse: SparseIndex, dense: DenseIndex) -> None:
    """Write postings, vectors, and stats; floats round-trip exactly via JSON."""
    os.makedirs(dir_path, exist_ok=True)
    meta = {
        "k1": sparse.k1,
        "b": sparse.b,
        "dimension": dense.dimension,
        "chunk_count": len(sparse.doc_lengths),
        "avg_doc_length": sparse.avg_doc_length,
        "vocab_size": sparse.vocab_size,
        "doc_lengths": dict(sorted(sparse.doc_lengths.items())),
    }
    with open(os.path.join(dir_path, META_FILE), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    write_jsonl(
        os.path.join(dir_path, POSTINGS_FILE),
        (
            {"token": tok, "postings": [[cid, tf] for cid, tf in sparse.postings[tok]]}
            for tok in sorted(sparse.postings)
        ),
    )
    write_jsonl(
        os.path.join(dir_path, VECTORS_FILE),
        (
            {"chunk_id": cid, "values": dense.matrix[i].tolist()}
            for i, cid in enumerate(dense.ids)
        ),
    )


def load_index(dir_path: str) -> tuple[SparseIndex, DenseIndex]:
    meta_path = os.path.join(dir_path, META_FILE)
    if not os.path.exists(meta_path):
        raise RetrievalError(f"no index at {dir_path}")
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    postings = {
        rec["token"]: [(cid, tf) for cid, tf in rec["postings"]]
        for rec in read_jsonl(os.path.join(dir_path, POSTINGS_FILE))
    }
    sparse = SparseIndex(
        postings=postings,
        doc_lengths=meta["doc_lengths"],
        avg_doc_length=meta["avg_doc_length"],
        vocab_size=meta["vocab_size"],
        k1=meta["k1"],
        b=meta["b"],
    )
    ids: list[str] = []
    rows: list[list[float]] = []
    for rec in read_jsonl(os.path.join(dir_path, VECTORS_FILE)):
        ids.append(rec["chunk_id"])
        rows.append(rec["values"])
    dense = DenseIndex(
        ids=ids,
        matrix=np.asarray(rows, dtype=np.float64),
        dimension=meta["dimension"],
    )
    return sparse, dense
