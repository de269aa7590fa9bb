"""Learning-rate schedule and decoupled-weight-decay Adam."""

from __future__ import annotations

import math

import numpy as np


def lr_schedule(step, total_steps, config):
    """Linear warmup from lr_init to lr_peak, then cosine decay to lr_final."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warm = config.warmup_fraction * total_steps
    if step < warm:
        return config.lr_init + (config.lr_peak - config.lr_init) * step / warm
    span = total_steps - warm
    if span <= 0:
        return config.lr_peak
    progress = (step - warm) / span
    return config.lr_final + 0.5 * (config.lr_peak - config.lr_final) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay; only matrices (ndim >= 2) are decayed."""

    def __init__(self, params, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.02):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay and p.data.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= lr * update

    def state_dict(self):
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}
