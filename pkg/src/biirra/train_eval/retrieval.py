"""Two-stage gallery ranking and retrieval reports."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..encoders import cat_sequences
from ..tensor_core import no_grad, ops
from .metrics import mean_ap, recall_at_k


@dataclass
class LanguageScores:
    r1: float
    r5: float
    r10: float
    map: float
    n_queries: int


@dataclass
class RetrievalReport:
    languages: dict = field(default_factory=dict)
    rerank_k: int = 0
    stage: str = "itc_only"

    def to_json(self):
        return {"rerank_k": self.rerank_k, "stage": self.stage,
                "languages": {k: asdict(v) for k, v in self.languages.items()}}


def _chunks(n, size):
    for lo in range(0, n, size):
        yield slice(lo, min(n, lo + size))


def encode_gallery(model, images, chunk=64):
    """Unmasked image encodings and their projected CLS vectors."""
    encs, feats = [], []
    for sl in _chunks(len(images), chunk):
        enc = model.encode_image(images[sl])
        encs.append(enc)
        feats.append(model.project_global(enc.cls, "image").data)
    return cat_sequences(encs), np.concatenate(feats)


def encode_queries(model, token_ids, language, chunk=128):
    encs, feats = [], []
    for sl in _chunks(len(token_ids), chunk):
        enc = model.encode_text(token_ids[sl], language)
        encs.append(enc)
        feats.append(model.project_global(enc.cls, "text").data)
    return cat_sequences(encs), np.concatenate(feats)


def match_probability(model, image_enc, text_enc, pairs, chunk=256):
    """Softmax matched-class probability of the ITM head for (query, gallery) pairs."""
    out = np.empty(len(pairs))
    for sl in _chunks(len(pairs), chunk):
        q_idx, g_idx = pairs[sl, 0], pairs[sl, 1]
        fused = model.fuse(image_enc.take(g_idx), text_enc.take(q_idx))
        prob = ops.softmax(model.itm_logits(fused.cls), axis=-1).data
        out[sl] = prob[:, 1]
    return out


def stage_one(similarity):
    """Best-first order by similarity with ties broken by lower gallery index."""
    return np.argsort(-np.asarray(similarity), axis=1, kind="stable")


def rerank(order, itm_scores, rerank_k, similarity=None, blend=0.0):
    """Reorder the first ``rerank_k`` columns of ``order`` by ITM score.

    ``itm_scores[q, j]`` scores ``order[q, j]``. With ``blend > 0`` the key is
    ``(1 - blend) * itm + blend * itc``. Ties keep the lower gallery index.
    """
    out = order.copy()
    for q in range(order.shape[0]):
        top = order[q, :rerank_k]
        key = np.asarray(itm_scores[q, :rerank_k], dtype=np.float64)
        if blend:
            key = (1.0 - blend) * key + blend * similarity[q, top]
        out[q, :rerank_k] = top[np.lexsort((top, -key))]
    return out


def rank_gallery(model, query_ids, gallery_images, rerank_k, language="source", blend=0.0):
    """Ranked gallery indices per query, plus the stage-one similarity matrix."""
    gallery_images = np.asarray(gallery_images)
    if len(gallery_images) == 0:
        raise ValueError("gallery is empty")
    if not 0 <= rerank_k <= len(gallery_images):
        raise ValueError(f"rerank_k={rerank_k} must lie in [0, {len(gallery_images)}]")
    with no_grad():
        image_enc, v = encode_gallery(model, gallery_images)
        text_enc, s = encode_queries(model, np.asarray(query_ids), language)
        sim = s @ v.T
        order = stage_one(sim)
        if rerank_k == 0:
            return order, sim
        q = np.repeat(np.arange(len(s)), rerank_k)
        pairs = np.stack([q, order[:, :rerank_k].reshape(-1)], axis=1)
        itm = match_probability(model, image_enc, text_enc, pairs).reshape(len(s), rerank_k)
    return rerank(order, itm, rerank_k, sim, blend), sim


def gallery_from_triplets(triplets):
    """Unique images (first occurrence order) with their identities."""
    seen = {}
    for t in triplets:
        seen.setdefault(t.image_id, t)
    uniq = list(seen.values())
    images = np.stack([t.image.features for t in uniq])
    return images, np.asarray([t.identity for t in uniq], dtype=np.int64)


def score_rankings(rankings, query_identities, gallery_identities):
    relevance = np.asarray(query_identities)[:, None] == np.asarray(gallery_identities)[None, :]
    g = relevance.shape[1]
    return LanguageScores(
        recall_at_k(rankings, relevance, min(1, g)),
        recall_at_k(rankings, relevance, min(5, g)),
        recall_at_k(rankings, relevance, min(10, g)),
        mean_ap(rankings, relevance),
        int(len(rankings)),
    )


def evaluate(model, triplets, rerank_k=16, blend=0.0, languages=("source", "target")):
    """Text-to-image retrieval over the unique images of ``triplets``; every caption is a query."""
    images, gallery_ids = gallery_from_triplets(triplets)
    rerank_k = min(rerank_k, len(images))
    query_ids = np.asarray([t.identity for t in triplets], dtype=np.int64)
    report = RetrievalReport(rerank_k=rerank_k, stage="reranked" if rerank_k else "itc_only")
    for lang in languages:
        tokens = np.stack([t.source_tokens if lang == "source" else t.target_tokens for t in triplets])
        order, _ = rank_gallery(model, tokens, images, rerank_k, lang, blend)
        report.languages[lang] = score_rankings(order, query_ids, gallery_ids)
    return report


def format_report(report):
    lines = [f"stage={report.stage} rerank_k={report.rerank_k}"]
    for lang, s in report.languages.items():
        lines.append(f"{lang:>7}: R@1={s.r1:.4f} R@5={s.r5:.4f} R@10={s.r10:.4f} "
                     f"mAP={s.map:.4f} (n={s.n_queries})")
    return "\n".join(lines)
