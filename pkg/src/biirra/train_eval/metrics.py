"""Rank@k and mean average precision over ranked galleries."""

from __future__ import annotations

import numpy as np

from ..kernels import KERNELS


def _hits(rankings, relevance):
    rankings = np.asarray(rankings, dtype=np.int64)
    relevance = np.asarray(relevance, dtype=bool)
    if rankings.ndim != 2 or relevance.shape != rankings.shape:
        raise ValueError("rankings and relevance must both be (queries, gallery)")
    return np.take_along_axis(relevance, rankings, axis=1)


def recall_at_k(rankings, relevance, k):
    """Fraction of queries with a relevant item in the top ``k``.

    ``rankings[q]`` lists gallery indices best first; ``relevance[q, g]`` marks
    gallery item ``g`` as relevant. Queries without any relevant item are
    skipped, and it is an error if that leaves none.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = _hits(rankings, relevance)
    if k > hits.shape[1]:
        raise ValueError(f"k={k} exceeds gallery size {hits.shape[1]}")
    defined = hits.any(axis=1)
    if not defined.any():
        raise ValueError("no query has a relevant gallery item")
    return float(hits[defined, :k].any(axis=1).mean())


def average_precisions(rankings, relevance):
    hits = _hits(rankings, relevance)
    if not hits.any(axis=1).all():
        missing = int(np.flatnonzero(~hits.any(axis=1))[0])
        raise ValueError(f"query {missing} has no relevant gallery item")
    return KERNELS["average_precision"](np.ascontiguousarray(hits.astype(np.float64)))


def mean_ap(rankings, relevance):
    return float(np.mean(average_precisions(rankings, relevance)))
