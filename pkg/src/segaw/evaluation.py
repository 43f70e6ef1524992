"""Scoring: boundary precision/recall/F1 and retrieval mean average precision.

Boundary matching is greedy one-to-one: candidate (hypothesis, reference)
pairs are taken in order of increasing frame distance, each endpoint used at
most once, and a pair counts when its distance is within the tolerance
(inclusive).  The utterance-final frame is never a scoreable boundary since
every segmentation ends there.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .segments import BoundarySet


@dataclass
class PrfCounts:
    matched: int = 0
    n_hyp: int = 0
    n_ref: int = 0

    def add(self, other):
        self.matched += other.matched
        self.n_hyp += other.n_hyp
        self.n_ref += other.n_ref

    @property
    def precision(self):
        return self.matched / self.n_hyp if self.n_hyp else 0.0

    @property
    def recall(self):
        return self.matched / self.n_ref if self.n_ref else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def match_boundaries(hyp, ref, tolerance):
    """Greedy one-to-one matching of interior boundaries; returns counts."""
    if hyp.n_frames != ref.n_frames:
        raise InputError(f"hypothesis covers {hyp.n_frames} frames, "
                         f"reference covers {ref.n_frames}")
    hyp_b = hyp.interior_ends
    ref_b = ref.interior_ends
    pairs = sorted(
        ((abs(h - r), i, j) for i, h in enumerate(hyp_b)
         for j, r in enumerate(ref_b) if abs(h - r) <= tolerance))
    used_h, used_r = set(), set()
    matched = 0
    for _, i, j in pairs:
        if i not in used_h and j not in used_r:
            used_h.add(i)
            used_r.add(j)
            matched += 1
    return PrfCounts(matched, len(hyp_b), len(ref_b))


def segmentation_prf(hyp, ref, tolerance=4):
    """Precision, recall, F1 for one utterance (or via :func:`corpus_prf`
    for a whole corpus)."""
    c = match_boundaries(hyp, ref, tolerance)
    return c.precision, c.recall, c.f1


def corpus_prf(hyps, refs, tolerance=4):
    """Micro-averaged counts over aligned hypothesis/reference lists."""
    if len(hyps) != len(refs):
        raise InputError("hypothesis and reference lists differ in length")
    total = PrfCounts()
    for h, r in zip(hyps, refs):
        total.add(match_boundaries(h, r, tolerance))
    return total


def random_segment(n_frames, rate, rng):
    """Independent per-frame boundary draws at ``rate``; the final frame
    always closes the last segment."""
    if not 0.0 <= rate <= 1.0:
        raise InputError("rate must be within [0, 1]")
    draws = rng.random(n_frames - 1) < rate if n_frames > 1 else np.empty(0)
    ends = [t + 1 for t in range(n_frames - 1) if draws[t]]
    return BoundarySet.from_ends(ends, n_frames)


@dataclass
class RetrievalReport:
    map: float
    per_query_ap: dict = field(default_factory=dict)
    n_queries_scored: int = 0


def average_precision(ranking, relevant):
    """Mean of precision-at-rank over the relevant documents.

    Relevant documents missing from the ranking contribute zero.  Duplicate
    document ids in a ranking are an input error.
    """
    if len(set(ranking)) != len(ranking):
        raise InputError("duplicate document in ranking")
    if not relevant:
        raise InputError("no relevant documents for this query")
    hits = 0
    total = 0.0
    for rank, doc in enumerate(ranking, start=1):
        if doc in relevant:
            hits += 1
            total += hits / rank
    return total / len(relevant)


def mean_average_precision(rankings, relevance):
    """MAP over queries; queries with no relevant documents are excluded.

    ``rankings`` maps query id -> ranked doc-id list; ``relevance`` maps
    query id -> set of relevant doc ids.
    """
    report = RetrievalReport(0.0)
    aps = []
    for qid in sorted(rankings):
        rel = relevance.get(qid, set())
        if not rel:
            continue
        ap = average_precision(rankings[qid], rel)
        report.per_query_ap[qid] = ap
        aps.append(ap)
    if aps:
        report.map = float(np.mean(aps))
        report.n_queries_scored = len(aps)
    return report
