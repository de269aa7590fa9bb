"""Reference-free translation quality scores and the clean/noisy split."""

from __future__ import annotations

import collections
import logging
import math
from decimal import ROUND_HALF_UP, Decimal
from typing import Protocol

log = logging.getLogger(__name__)


class QualityScorer(Protocol):
    def score(self, source_text: str, target_text: str) -> float: ...


class ConstantScorer:
    def __init__(self, value):
        self.value = float(value)

    def score(self, source_text, target_text):
        return self.value


class LexiconOverlapScorer:
    """Bag-of-words agreement between a source sentence and its translation.

    Every source word is mapped through ``lexicon`` and the multiset overlap
    with the target words is divided by the longer of the two lengths, so the
    score ignores word order and lies in [0, 1]. Two empty texts score 1.
    """

    def __init__(self, lexicon):
        self.lexicon = dict(lexicon)

    def score(self, source_text, target_text):
        src = [self.lexicon.get(w, w) for w in source_text.split()]
        tgt = target_text.split()
        longest = max(len(src), len(tgt))
        if longest == 0:
            return 1.0
        overlap = sum((collections.Counter(src) & collections.Counter(tgt)).values())
        return overlap / longest


def noise_level(source_text, target_text, scorer, warnings=None):
    """phi = 1 - quality; out-of-range quality is clamped and counted in ``warnings``."""
    q = float(scorer.score(source_text, target_text))
    if math.isnan(q) or q < 0.0 or q > 1.0:
        clamped = 0.0 if math.isnan(q) else min(1.0, max(0.0, q))
        log.warning("quality score %r outside [0, 1]; clamped to %r", q, clamped)
        if warnings is not None:
            warnings["clamped"] += 1
        q = clamped
    return 1.0 - q


def default_threshold(phis):
    """Mean noise level rounded half away from zero to two decimals."""
    phis = list(phis)
    if not phis:
        raise ValueError("cannot derive a threshold from an empty list")
    mean = math.fsum(phis) / len(phis)
    return float(Decimal(repr(mean)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def split_by_threshold(scored, theta):
    """Order-stable partition into (phi <= theta, phi > theta)."""
    clean, noisy = [], []
    for item in scored:
        (clean if item.phi <= theta else noisy).append(item)
    return clean, noisy


def phi_histogram(phis, bins=20):
    counts = [0] * bins
    for p in phis:
        counts[min(bins - 1, max(0, int(math.floor(p * bins))))] += 1
    return counts
