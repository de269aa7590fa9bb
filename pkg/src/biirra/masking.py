"""Text-token masking and blockwise / random / gridwise image-patch masking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoders import CLS_ID, MASK_ID, PAD_ID

MIN_BLOCK_AREA = 4
MIN_ASPECT = 0.3
STRATEGIES = ("blockwise", "random", "gridwise")


@dataclass
class MaskSpec:
    indices: np.ndarray
    total: int
    strategy: str
    target_ratio: float
    fallback: bool = False
    blocks: list = field(default_factory=list)

    def __post_init__(self):
        self.indices = np.unique(np.asarray(self.indices, dtype=np.int64))
        if self.indices.size and (self.indices[0] < 0 or self.indices[-1] >= self.total):
            raise ValueError("mask index out of range")

    def as_bool(self):
        m = np.zeros(self.total, dtype=bool)
        m[self.indices] = True
        return m

    def to_json(self):
        return json.dumps({"strategy": self.strategy, "total": int(self.total),
                           "indices": [int(i) for i in self.indices]})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        idx = doc["indices"]
        ratio = len(idx) / doc["total"] if doc["total"] else 0.0
        return cls(np.asarray(idx, dtype=np.int64), int(doc["total"]), doc["strategy"], ratio)


def mask_text(token_ids, p_txt, rng, force_one=True):
    """Independently replace each content token by MASK with probability ``p_txt``.

    Returns ``(masked_ids, label_positions)``; labels are ``token_ids[label_positions]``.
    With ``force_one`` a row where nothing was drawn gets one uniformly chosen
    candidate masked, so every row contributes to the MLM loss.
    """
    if not 0.0 <= p_txt <= 1.0:
        raise ValueError("p_txt must lie in [0, 1]")
    ids = np.asarray(token_ids, dtype=np.int64)
    cand = np.flatnonzero((ids != PAD_ID) & (ids != CLS_ID))
    if cand.size == 0:
        raise ValueError("no maskable tokens")
    draws = rng.random(cand.size) < p_txt
    chosen = cand[draws]
    if chosen.size == 0 and force_one:
        chosen = cand[[rng.integers(cand.size)]]
    masked = ids.copy()
    masked[chosen] = MASK_ID
    return masked, chosen


def mask_text_batch(token_ids, p_txt, rng, force_one=True):
    """Row-wise ``mask_text``; returns masked ids and a boolean label mask."""
    ids = np.asarray(token_ids, dtype=np.int64)
    out = ids.copy()
    labels = np.zeros(ids.shape, dtype=bool)
    for i in range(ids.shape[0]):
        out[i], pos = mask_text(ids[i], p_txt, rng, force_one)
        labels[i, pos] = True
    return out, labels


def _block_feasible(rows, cols):
    for h in range(1, rows + 1):
        for w in range(1, cols + 1):
            if h * w >= MIN_BLOCK_AREA and MIN_ASPECT <= h / w <= 1 / MIN_ASPECT:
                return True
    return False


def mask_image_blockwise(grid, p_img, rng, max_block_area=None, max_attempts=10_000):
    """Union random rectangles until at least ``ceil(p_img * M)`` patches are covered.

    Each rectangle has area >= 4, aspect ratio in [0.3, 1/0.3] and log-uniform
    target area in [4, max_block_area]. Grids that cannot hold such a block fall
    back to the random strategy with ``fallback=True``.
    """
    if not 0.0 < p_img < 1.0 + 1e-12:
        raise ValueError("p_img must lie in (0, 1]")
    rows, cols = grid
    total = rows * cols
    target = min(total, math.ceil(p_img * total - 1e-9))
    if not _block_feasible(rows, cols):
        spec = mask_image_random(grid, p_img, rng)
        spec.strategy = "blockwise"
        spec.fallback = True
        return spec
    if max_block_area is None:
        max_block_area = max(MIN_BLOCK_AREA, target)
    log_area = (math.log(MIN_BLOCK_AREA), math.log(max(max_block_area, MIN_BLOCK_AREA)))
    log_aspect = (math.log(MIN_ASPECT), math.log(1 / MIN_ASPECT))
    mask = np.zeros((rows, cols), dtype=bool)
    blocks = []
    attempts = 0
    while mask.sum() < target:
        attempts += 1
        if attempts > max_attempts:
            rest = np.flatnonzero(~mask.reshape(-1))
            extra = rng.choice(rest, target - int(mask.sum()), replace=False)
            mask.reshape(-1)[extra] = True
            return MaskSpec(np.flatnonzero(mask.reshape(-1)), total, "blockwise", p_img,
                            fallback=True, blocks=blocks)
        area = math.exp(rng.uniform(*log_area))
        aspect = math.exp(rng.uniform(*log_aspect))
        h = int(round(math.sqrt(area * aspect)))
        w = int(round(math.sqrt(area / aspect)))
        if h < 1 or w < 1 or h > rows or w > cols or h * w < MIN_BLOCK_AREA:
            continue
        if not MIN_ASPECT <= h / w <= 1 / MIN_ASPECT:
            continue
        top = int(rng.integers(0, rows - h + 1))
        left = int(rng.integers(0, cols - w + 1))
        mask[top:top + h, left:left + w] = True
        blocks.append((top, left, h, w))
    return MaskSpec(np.flatnonzero(mask.reshape(-1)), total, "blockwise", p_img, blocks=blocks)


def mask_image_random(grid, p_img, rng):
    """Exactly ``round(p_img * M)`` distinct patches, uniformly."""
    rows, cols = grid
    total = rows * cols
    n = int(round(p_img * total))
    n = min(max(n, 0), total)
    idx = rng.choice(total, n, replace=False) if n else np.zeros(0, dtype=np.int64)
    return MaskSpec(idx, total, "random", p_img)


def mask_image_gridwise(grid, p_img, rng):
    """Regular lattice: a checkerboard at p=0.5, otherwise every k-th raster patch."""
    if not 0.0 < p_img <= 1.0:
        raise ValueError("p_img must lie in (0, 1]")
    rows, cols = grid
    total = rows * cols
    if abs(p_img - 0.5) < 1e-12:
        parity = int(rng.integers(2))
        r, c = np.divmod(np.arange(total), cols)
        idx = np.flatnonzero((r + c) % 2 == parity)
    else:
        k = max(1, int(round(1.0 / p_img)))
        phase = int(rng.integers(k))
        idx = np.arange(phase, total, k)
    return MaskSpec(idx, total, "gridwise", p_img)


def mask_image(strategy, grid, p_img, rng):
    if strategy == "blockwise":
        return mask_image_blockwise(grid, p_img, rng)
    if strategy == "random":
        return mask_image_random(grid, p_img, rng)
    if strategy == "gridwise":
        return mask_image_gridwise(grid, p_img, rng)
    raise ValueError(f"unknown masking strategy {strategy!r}")


def mask_image_batch(strategy, grid, p_img, n, rng):
    """One fresh mask per image; returns (n, M) booleans and the specs."""
    specs = [mask_image(strategy, grid, p_img, rng) for _ in range(n)]
    return np.stack([s.as_bool() for s in specs]), specs
