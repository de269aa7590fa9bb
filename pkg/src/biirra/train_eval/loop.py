"""Training loop: collate, joint loss, backward, AdamW."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..data import collate
from ..encoders import Model, ModelConfig
from ..objectives import joint_loss
from ..tensor_core import backward
from .optim import AdamW, lr_schedule

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "itc", "a_itm", "mlm", "d_mim", "total")


class TrainingDiverged(FloatingPointError):
    def __init__(self, step, breakdown):
        self.step = step
        self.breakdown = breakdown
        parts = " ".join(f"{k}={v!r}" for k, v in breakdown.items())
        super().__init__(f"non-finite loss at step {step}: {parts}")


@dataclass
class TrainResult:
    model: Model
    log: list = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0


def model_config_for(config, triplets, vocab_size, **overrides):
    """Model shape from the training config plus what the data fixes (grid, f, L, vocab)."""
    t = triplets[0]
    kwargs = dict(dim=config.dim, heads=config.heads, uni_layers=config.uni_layers,
                  fusion_layers=config.fusion_layers, proj_dim=config.proj_dim,
                  mlp_ratio=config.mlp_ratio, mlm_kv_text=config.mlm_kv_text,
                  patch_grid=(t.image.rows, t.image.cols), patch_dim=t.image.features.shape[1],
                  max_text_len=len(t.source_tokens), vocab_size=vocab_size, seed=config.seed)
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


def total_steps(config, n_triplets):
    if config.epochs > 0:
        per_epoch = max(1, n_triplets // config.batch_size)
        return config.epochs * per_epoch
    return config.steps


def _batches(triplets, batch_size, rng):
    while True:
        yield from collate(triplets, batch_size, rng)


def train(model, triplets, config, log_path=None, on_step=None):
    """Run the joint objective for ``total_steps`` AdamW updates.

    All randomness (batch order, masks, negatives) comes from one generator
    seeded with ``config.seed``, so equal inputs give equal loss logs.
    """
    rng = np.random.default_rng(config.seed)
    n_steps = total_steps(config, len(triplets))
    opt = AdamW(model.parameters(), (config.beta1, config.beta2), config.adam_eps, config.weight_decay)
    result = TrainResult(model)
    batches = _batches(triplets, config.batch_size, rng)
    start = time.perf_counter()
    for step in range(n_steps):
        batch = next(batches)
        bundle = joint_loss(batch, model, config, rng)
        if not math.isfinite(bundle.total):
            raise TrainingDiverged(step, {k: getattr(bundle, k) for k in LOSS_COLUMNS[1:]})
        model.zero_grad()
        backward(bundle.total_tensor)
        opt.step(lr_schedule(step, n_steps, config))
        row = bundle.row(step)
        result.log.append(row)
        if on_step is not None:
            on_step(step, bundle)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d total %.4f itc %.4f a_itm %.4f mlm %.4f d_mim %.4f",
                     step, bundle.total, bundle.itc, bundle.a_itm, bundle.mlm, bundle.d_mim)
    model.zero_grad()
    result.steps = n_steps
    result.seconds = time.perf_counter() - start
    if log_path is not None:
        write_loss_log(log_path, result.log)
    return result


def write_loss_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in LOSS_COLUMNS])


def read_loss_log(path):
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]
