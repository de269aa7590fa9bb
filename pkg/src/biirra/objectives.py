"""The four pretext losses and their weighted sum.

Shapes: N triplets per batch, d model width, M image patches, L text length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import cat_sequences
from .masking import mask_image_batch, mask_text_batch
from .tensor_core import ops
from .tensor_core.tensor import Tensor


@dataclass
class LossBundle:
    itc: float
    a_itm: float
    mlm: float
    d_mim: float
    total: float
    lambda1: float
    lambda2: float
    total_tensor: Tensor = field(repr=False, default=None)
    aux: dict = field(repr=False, default_factory=dict)

    def row(self, step):
        return {"step": step, "itc": self.itc, "a_itm": self.a_itm, "mlm": self.mlm,
                "d_mim": self.d_mim, "total": self.total}


@dataclass
class ItcTargets:
    i2t: np.ndarray
    t2i: np.ndarray


@dataclass
class ItmBatch:
    """One hard negative per anchor: a text for each image, an image for each text."""

    neg_text_for_image: np.ndarray
    neg_image_for_text: np.ndarray

    def pairs(self):
        """(image index, text index, label) with label 1 = matched."""
        n = len(self.neg_text_for_image)
        out = [(i, i, 1) for i in range(n)]
        out += [(i, int(self.neg_text_for_image[i]), 0) for i in range(n)]
        out += [(int(self.neg_image_for_text[j]), j, 0) for j in range(n)]
        return out


@dataclass
class StepDraws:
    """Every random choice of one step, so a loss can be re-evaluated frozen."""

    source_ids: np.ndarray
    source_labels: np.ndarray
    target_ids: np.ndarray
    target_labels: np.ndarray
    image_mask: np.ndarray
    neg_source: ItmBatch | None = None
    neg_target: ItmBatch | None = None
    # constant distillation targets (B, M+1, d); replaces the live teacher fusion
    frozen_teacher: np.ndarray | None = None


# -- ITC -------------------------------------------------------------------------

def build_itc_targets(identities):
    ids = np.asarray(identities)
    same = (ids[:, None] == ids[None, :]).astype(np.float64)
    y = same / same.sum(axis=1, keepdims=True)
    # identity equality is symmetric, so both directions share one target matrix
    return ItcTargets(y, y.copy())


def itc_logits(image_feat, text_feat, log_tau):
    """(N, N) similarities of unit-norm features divided by exp(log_tau)."""
    sims = ops.matmul(image_feat, ops.transpose_last(text_feat))
    return ops.mul(sims, ops.exp(ops.neg(log_tau)))


def itc_loss(image_feat, source_feat, target_feat, identities, log_tau):
    """Bi-lingual contrastive loss over in-batch image/text similarities.

    Each language contributes the mean of its image-to-text and text-to-image
    cross-entropies; the result averages the two languages.
    """
    n = image_feat.shape[0]
    if n < 2:
        raise ValueError("contrastive loss needs at least two samples")
    targets = build_itc_targets(identities)
    per_lang = []
    logits_out = []
    for text_feat in (source_feat, target_feat):
        logits = itc_logits(image_feat, text_feat, log_tau)
        p_i2t = ops.softmax(logits, axis=1)
        p_t2i = ops.softmax(ops.transpose_last(logits), axis=1)
        lang = ops.scale(ops.cross_entropy(p_i2t, targets.i2t) + ops.cross_entropy(p_t2i, targets.t2i), 0.5)
        per_lang.append(lang)
        logits_out.append(logits.data)
    loss = ops.scale(per_lang[0] + per_lang[1], 0.5)
    return loss, {"logits_source": logits_out[0], "logits_target": logits_out[1]}


# -- ITM -------------------------------------------------------------------------

def _draw(weights, rng):
    c = np.cumsum(weights)
    return int(min(np.searchsorted(c, rng.random() * c[-1], side="right"), len(c) - 1))


def sample_itm_negatives(sim_matrix, identities, rng, mode="hard"):
    """Pick one different-identity negative per image and per text.

    ``hard`` samples proportionally to the softmax of the row (image anchors)
    or column (text anchors) of ``sim_matrix`` restricted to valid negatives;
    ``random`` samples uniformly among them.
    """
    sim = np.asarray(sim_matrix, dtype=np.float64)
    ids = np.asarray(identities)
    if len(set(ids.tolist())) < 2:
        raise ValueError("negative sampling needs at least two identities in the batch")
    if mode not in ("hard", "random"):
        raise ValueError(f"unknown sampler mode {mode!r}")
    n = len(ids)
    valid = ids[:, None] != ids[None, :]

    def weights(row, ok):
        if mode == "random":
            return ok.astype(np.float64)
        z = np.where(ok, row, -np.inf)
        z = z - z[ok].max()
        return np.where(ok, np.exp(z), 0.0)

    neg_text = np.array([_draw(weights(sim[i], valid[i]), rng) for i in range(n)], dtype=np.int64)
    neg_image = np.array([_draw(weights(sim[:, j], valid[:, j]), rng) for j in range(n)], dtype=np.int64)
    return ItmBatch(neg_text, neg_image)


def itm_loss_from_logits(logits, labels):
    """Mean 2-way cross-entropy; class 1 means matched."""
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.eye(2)[labels]
    return ops.cross_entropy(ops.softmax(logits, axis=-1), onehot)


def _itm_branch(model, image, text, negs, name):
    n = image.batch
    if image.image_mask is not None and image.image_mask.any():
        model.counters[f"itm_{name}_masked_image"] += 1
    else:
        model.counters[f"itm_{name}_plain_image"] += 1
    query = cat_sequences([image, image, image.take(negs.neg_image_for_text)])
    kv = cat_sequences([text, text.take(negs.neg_text_for_image), text])
    fused = model.fuse(query, kv)
    logits = model.itm_logits(fused.cls)
    labels = np.concatenate([np.ones(n, dtype=np.int64), np.zeros(2 * n, dtype=np.int64)])
    loss = itm_loss_from_logits(logits, labels)
    positives = ops.getitem(fused.states, slice(0, n))
    return loss, positives, logits.data, labels


def a_itm_loss(model, source_branch, target_branch):
    """Matching loss averaged over the source and target branches.

    Each branch is ``(image_encoding, text_encoding, ItmBatch)``; the asymmetry
    lives in which image encoding the caller hands to each branch. Returns the
    loss and a dict with the per-branch logits, labels, and positive-pair
    fusion states (reused as the distillation teacher / student).
    """
    loss_s, pos_s, logit_s, lab_s = _itm_branch(model, *source_branch, "source")
    loss_t, pos_t, logit_t, lab_t = _itm_branch(model, *target_branch, "target")
    loss = ops.scale(loss_s + loss_t, 0.5)
    aux = {"logits_source": logit_s, "labels_source": lab_s,
           "logits_target": logit_t, "labels_target": lab_t,
           "fused_source": pos_s, "fused_target": pos_t}
    return loss, aux


# -- MLM -------------------------------------------------------------------------

def mlm_loss_from_logits(logits, labels, vocab_size):
    onehot = np.zeros((len(labels), vocab_size))
    onehot[np.arange(len(labels)), labels] = 1.0
    return ops.cross_entropy(ops.softmax(logits, axis=-1), onehot)


def mlm_loss(model, image, masked_texts):
    """Sum over languages of the masked-token cross-entropy.

    ``masked_texts`` holds ``(masked_text_encoding, label_mask, original_ids)``
    per language. The text is the fusion query; keys/values are the image
    unless the model is configured for the literal text-on-text reading.
    """
    vocab = model.config.vocab_size
    total = None
    aux = {}
    for enc, label_mask, original in masked_texts:
        label_mask = np.asarray(label_mask, dtype=bool)
        if not label_mask.any():
            raise ValueError("MLM needs at least one masked position")
        kv = enc if model.config.mlm_kv_text else image
        fused = model.fuse(enc, kv)
        rows, cols = np.nonzero(label_mask)
        picked = ops.getitem(fused.states, (rows, cols))
        logits = model.mlm_logits(picked)
        labels = np.asarray(original)[rows, cols]
        loss = mlm_loss_from_logits(logits, labels, vocab)
        aux[f"logits_{enc.language}"] = logits.data
        aux[f"labels_{enc.language}"] = labels
        total = loss if total is None else total + loss
    return total, aux


# -- D-MIM -----------------------------------------------------------------------

def d_mim_loss(teacher_tokens, student_tokens, image_mask, head, all_positions=False):
    """Mean of ``1 - cos(teacher, head(student))`` over masked patch rows.

    ``teacher_tokens`` is detached here, so nothing upstream of it gets a gradient.
    """
    mask = np.asarray(image_mask, dtype=bool)
    if all_positions:
        mask = np.ones_like(mask)
    if not mask.any():
        raise ValueError("distillation needs at least one masked patch")
    rows, cols = np.nonzero(mask)
    teacher = ops.detach(teacher_tokens)
    t_rows = ops.getitem(teacher, (rows, cols))
    s_rows = head(ops.getitem(student_tokens, (rows, cols)))
    cos = ops.cosine_similarity(t_rows, s_rows)
    loss = ops.mean(ops.neg(cos) + 1.0)
    return loss, {"teacher": t_rows.data, "student": s_rows.data}


# -- joint objective -------------------------------------------------------------

def draw_masks(batch, config, grid, rng):
    """Text masks for both languages and one image mask per image, in that order."""
    src, src_lab = mask_text_batch(batch.source_ids, config.p_txt, rng, config.force_text_mask)
    tgt, tgt_lab = mask_text_batch(batch.target_ids, config.p_txt, rng, config.force_text_mask)
    img, _ = mask_image_batch(config.image_mask_strategy, grid, config.p_img, len(batch), rng)
    return StepDraws(src, src_lab, tgt, tgt_lab, img)


def joint_loss(batch, model, config, rng, draws=None):
    """Forward pass of every enabled objective; returns a LossBundle.

    A fresh ``StepDraws`` is sampled from ``rng`` unless one is given. Passing
    the same draws (with negatives filled in) freezes all randomness, which is
    what the finite-difference checks rely on.
    """
    if draws is None:
        draws = draw_masks(batch, config, model.config.patch_grid, rng)
    ids = batch.identities
    mask_tgt_img = config.enable_aitm and config.itm_mask_target_image
    mask_src_img = config.enable_aitm and config.itm_mask_source_image
    need_masked_image = config.enable_dmim or mask_tgt_img or mask_src_img
    need_masked_text = (config.enable_mlm or (config.enable_aitm and
                        (config.itm_mask_source_text or config.itm_mask_target_text)))

    image = model.encode_image(batch.images)
    image_m = model.encode_image(batch.images, draws.image_mask) if need_masked_image else None
    src = model.encode_text(batch.source_ids, "source")
    tgt = model.encode_text(batch.target_ids, "target")
    src_m = tgt_m = None
    if need_masked_text:
        src_m = model.encode_text(draws.source_ids, "source")
        tgt_m = model.encode_text(draws.target_ids, "target")

    aux = {"identities": np.asarray(ids)}
    v = model.project_global(image.cls, "image")
    s = model.project_global(src.cls, "text")
    t = model.project_global(tgt.cls, "text")
    itc, itc_aux = itc_loss(v, s, t, ids, model.log_tau)
    aux["itc"] = dict(itc_aux, image=v.data, source=s.data, target=t.data, log_tau=float(model.log_tau.data))

    zero = 0.0
    a_itm = mlm = d_mim = None
    teacher = student = None
    if config.enable_aitm:
        if draws.neg_source is None:
            draws.neg_source = sample_itm_negatives(itc_aux["logits_source"], ids, rng, config.itm_sampler)
        if draws.neg_target is None:
            draws.neg_target = sample_itm_negatives(itc_aux["logits_target"], ids, rng, config.itm_sampler)
        src_branch = (image_m if mask_src_img else image,
                      src_m if config.itm_mask_source_text else src, draws.neg_source)
        tgt_branch = (image_m if mask_tgt_img else image,
                      tgt_m if config.itm_mask_target_text else tgt, draws.neg_target)
        a_itm, itm_aux = a_itm_loss(model, src_branch, tgt_branch)
        aux["itm"] = {k: v_ for k, v_ in itm_aux.items() if not k.startswith("fused")}
        if not mask_src_img and not config.itm_mask_source_text:
            teacher = itm_aux["fused_source"]
        if mask_tgt_img and not config.itm_mask_target_text:
            student = itm_aux["fused_target"]

    if config.enable_dmim:
        if draws.frozen_teacher is not None:
            teacher = Tensor(draws.frozen_teacher)
        elif teacher is None:
            teacher = model.fuse(image, src).states
        if student is None:
            student = model.fuse(image_m, tgt).states
        d_mim, dmim_aux = d_mim_loss(ops.getitem(teacher, (slice(None), slice(1, None))),
                                     ops.getitem(student, (slice(None), slice(1, None))),
                                     draws.image_mask, model.dmim_head, config.dmim_all_positions)
        aux["dmim"] = dmim_aux
        aux["dmim"]["teacher_states"] = teacher.data

    if config.enable_mlm:
        mlm, mlm_aux = mlm_loss(model, image, [(src_m, draws.source_labels, batch.source_ids),
                                               (tgt_m, draws.target_labels, batch.target_ids)])
        aux["mlm"] = mlm_aux

    total = itc
    if a_itm is not None:
        total = total + ops.scale(a_itm, config.lambda1)
    if mlm is not None:
        total = total + mlm
    if d_mim is not None:
        total = total + ops.scale(d_mim, config.lambda2)

    def val(x):
        return zero if x is None else float(x.data)

    bundle = LossBundle(val(itc), val(a_itm), val(mlm), val(d_mim), float(total.data),
                        config.lambda1, config.lambda2, total, aux)
    aux["draws"] = draws
    aux["tensors"] = {k: t for k, t in (("itc", itc), ("a_itm", a_itm), ("mlm", mlm),
                                         ("d_mim", d_mim), ("total", total)) if t is not None}
    if not math.isfinite(bundle.total):
        bundle.aux["nonfinite"] = True
    return bundle
