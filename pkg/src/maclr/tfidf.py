"""Sparse TF-IDF vectors and exact sparse top-k retrieval.

The weighting is the smoothed variant idf(t) = ln((1 + N) / (1 + df(t))) + 1
with raw term counts and L2 normalization, stated exactly so tests are
bit-reproducible. The table owns its token -> column mapping (lexicographic),
independent of the encoder vocabulary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class SparseVector:
    """Unit-L2 sparse vector; indices strictly increasing."""

    indices: np.ndarray  # int64, sorted
    values: np.ndarray   # float32

    @property
    def nnz(self) -> int:
        return len(self.indices)


EMPTY_VECTOR = SparseVector(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.float32))


@dataclass
class IdfTable:
    token_to_id: dict[str, int]
    idf: np.ndarray  # float64, aligned to token ids
    n_docs: int


def fit_idf(documents: list[list[str]]) -> IdfTable:
    """Document-frequency scan over token sequences; smoothed idf per token."""
    if not documents:
        raise ValueError("fit_idf requires at least one document")
    df: dict[str, int] = {}
    for doc in documents:
        for tok in set(doc):
            df[tok] = df.get(tok, 0) + 1
    tokens = sorted(df)
    n = len(documents)
    idf = np.array(
        [math.log((1 + n) / (1 + df[t])) + 1.0 for t in tokens], dtype=np.float64
    )
    return IdfTable(
        token_to_id={t: i for i, t in enumerate(tokens)},
        idf=idf,
        n_docs=n,
    )


def vectorize(tokens: list[str], table: IdfTable) -> SparseVector:
    """Raw term count x idf, L2-normalized; tokens outside the table are dropped."""
    counts: dict[int, int] = {}
    get = table.token_to_id.get
    for tok in tokens:
        tid = get(tok)
        if tid is not None:
            counts[tid] = counts.get(tid, 0) + 1
    if not counts:
        return EMPTY_VECTOR
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64) * table.idf[indices]
    values /= np.linalg.norm(values)
    return SparseVector(indices=indices, values=values.astype(np.float32))


def dot(a: SparseVector, b: SparseVector) -> float:
    """Inner product of two sparse vectors (cosine when both are unit)."""
    ai, bi = a.indices, b.indices
    common, apos, bpos = np.intersect1d(ai, bi, assume_unique=True, return_indices=True)
    if len(common) == 0:
        return 0.0
    return float(np.dot(a.values[apos].astype(np.float64),
                        b.values[bpos].astype(np.float64)))


def sparse_topk(query: SparseVector, index: list[SparseVector],
                k: int) -> list[tuple[int, float]]:
    """Exact top-k of the index by dot product; score ties break to the smaller id.

    Returns at most min(k, len(index)) (position, score) entries.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n = len(index)
    if n == 0:
        return []
    scores = np.zeros(n, dtype=np.float64)
    if query.nnz:
        dim = int(query.indices[-1]) + 1
        dense_q = np.zeros(dim, dtype=np.float64)
        dense_q[query.indices] = query.values.astype(np.float64)
        for pos, vec in enumerate(index):
            if vec.nnz == 0:
                continue
            inside = vec.indices < dim
            if inside.any():
                scores[pos] = np.dot(dense_q[vec.indices[inside]],
                                     vec.values[inside].astype(np.float64))
    order = np.lexsort((np.arange(n), -scores))[:k]
    return [(int(i), float(scores[i])) for i in order]


def dump_vectors(vectors: list[SparseVector], ids: list[int], path) -> None:
    """Text dump: one line per doc, "doc_id token_id:value ..." with 6 decimals."""
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, vec in zip(ids, vectors):
            cells = " ".join(f"{int(i)}:{v:.6f}" for i, v in zip(vec.indices, vec.values))
            f.write(f"{doc_id} {cells}".rstrip() + "\n")
