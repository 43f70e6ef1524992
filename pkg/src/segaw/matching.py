"""Query-by-example relevance scoring.

Segment route: slide the query's embedding sequence over the document's and
take, per offset, the product of pairwise cosine similarities (clamped to
[0, 1] so a bad segment cannot flip the product's sign); the document score
is the best offset.  Frame route: subsequence dynamic time warping over raw
features as the classic baseline, with cosine distance, steps
{(1,0),(0,1),(1,1)}, a free query start/end anywhere in the document, and
path-length normalization of the best path's cost.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError


def cosine_sim(a, b):
    """Cosine similarity in [-1, 1]; zero vectors compare as 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"vector shapes differ: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass
class MatchResult:
    score: float
    best_offset: int       # 1-based; 0 when the query cannot fit
    offset_scores: np.ndarray

    def __post_init__(self):
        self.offset_scores = np.asarray(self.offset_scores, dtype=np.float64)


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return x / safe


def subsequence_score(query, doc):
    """Best sliding-window product of clamped cosine similarities.

    Window n (1-based) multiplies sim(query[m], doc[m+n-1]) over the query's
    segments.  A query longer than the document scores 0 with no offsets.
    """
    query = np.asarray(query, dtype=np.float64)
    doc = np.asarray(doc, dtype=np.float64)
    if query.ndim != 2 or doc.ndim != 2 or query.shape[1] != doc.shape[1]:
        raise ShapeError("query and document embeddings must be (N, d) with equal d")
    if query.shape[0] < 1:
        raise InputError("query has no segments")
    nq, nd = query.shape[0], doc.shape[0]
    if nq > nd:
        return MatchResult(0.0, 0, np.empty(0))
    sims = np.clip(_unit_rows(query) @ _unit_rows(doc).T, 0.0, 1.0)
    n_offsets = nd - nq + 1
    scores = np.ones(n_offsets)
    for m in range(nq):
        scores = scores * sims[m, m:m + n_offsets]
    best = int(np.argmax(scores))
    return MatchResult(float(scores[best]), best + 1, scores)


def dtw_score(query, doc):
    """Subsequence-DTW relevance: 1 - best path cost / its path length.

    Local cost is 1 - cosine similarity clamped to [0, 1].  Among equal-cost
    paths the longer one wins (lower normalized cost), then the earlier end
    column; path length counts matched cells.
    """
    query = np.asarray(query, dtype=np.float64)
    doc = np.asarray(doc, dtype=np.float64)
    if query.size == 0 or doc.size == 0:
        raise InputError("cannot align empty sequences")
    if query.shape[1] != doc.shape[1]:
        raise ShapeError("query and document features must share a dimension")
    cost = 1.0 - np.clip(_unit_rows(query) @ _unit_rows(doc).T, 0.0, 1.0)
    tq, td = cost.shape
    acc = np.empty((tq, td))
    length = np.empty((tq, td), dtype=np.int64)
    acc[0] = cost[0]          # free start anywhere in the document
    length[0] = 1
    for j in range(1, td):    # horizontal steps within the first query frame
        cont = acc[0, j - 1] + cost[0, j]
        if cont < acc[0, j] or (cont == acc[0, j] and length[0, j - 1] + 1 > 1):
            acc[0, j] = cont
            length[0, j] = length[0, j - 1] + 1
    for i in range(1, tq):
        for j in range(td):
            best_a, best_l = acc[i - 1, j], length[i - 1, j]  # vertical
            if j > 0:
                for pa, pl in ((acc[i - 1, j - 1], length[i - 1, j - 1]),
                               (acc[i, j - 1], length[i, j - 1])):
                    if pa < best_a or (pa == best_a and pl > best_l):
                        best_a, best_l = pa, pl
            acc[i, j] = best_a + cost[i, j]
            length[i, j] = best_l + 1
    end = 0
    for j in range(1, td):    # free end: min cost, then longer path
        if acc[tq - 1, j] < acc[tq - 1, end] or (
                acc[tq - 1, j] == acc[tq - 1, end]
                and length[tq - 1, j] > length[tq - 1, end]):
            end = j
    return 1.0 - acc[tq - 1, end] / length[tq - 1, end]
