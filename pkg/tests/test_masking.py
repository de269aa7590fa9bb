import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biirra.encoders import CLS_ID, MASK_ID, PAD_ID
from biirra.kernels import count_components
from biirra.masking import (
    MaskSpec, mask_image, mask_image_batch, mask_image_blockwise, mask_image_gridwise,
    mask_image_random, mask_text, mask_text_batch,
)


# -- text -------------------------------------------------------------------------

def test_text_mask_only_touches_content_tokens(rng):
    ids = np.array([CLS_ID, 5, 6, 7, PAD_ID, PAD_ID])
    for _ in range(50):
        masked, pos = mask_text(ids, 0.5, rng)
        assert masked[0] == CLS_ID and np.all(masked[4:] == PAD_ID)
        assert np.all(masked[pos] == MASK_ID)
        assert set(pos) <= {1, 2, 3}


def test_text_mask_force_one(rng):
    ids = np.array([CLS_ID, 5, PAD_ID])
    for _ in range(20):
        _, pos = mask_text(ids, 0.0, rng, force_one=True)
        assert list(pos) == [1]
    _, pos = mask_text(ids, 0.0, rng, force_one=False)
    assert pos.size == 0


def test_text_mask_errors(rng):
    with pytest.raises(ValueError):
        mask_text(np.array([CLS_ID, PAD_ID]), 0.4, rng)
    with pytest.raises(ValueError):
        mask_text(np.array([CLS_ID, 5]), 1.5, rng)


@pytest.mark.parametrize("force_one", [False, True])
def test_text_mask_rate(force_one):
    rng = np.random.default_rng(0)
    ids = np.full((12_500, 9), 7)
    ids[:, 0] = CLS_ID
    _, labels = mask_text_batch(ids, 0.4, rng, force_one)
    n_tokens = 12_500 * 8
    assert n_tokens >= 100_000
    assert abs(labels.sum() / n_tokens - 0.4) <= 0.01


# -- image ------------------------------------------------------------------------

def test_random_exact_count(rng):
    for p in (0.1, 0.25, 0.5, 0.75, 1.0):
        spec = mask_image_random((8, 8), p, rng)
        assert spec.indices.size == round(p * 64)


@given(p=st.floats(0.05, 1.0), seed=st.integers(0, 2**32 - 1),
       rows=st.integers(2, 9), cols=st.integers(2, 9))
def test_blockwise_reaches_target(p, seed, rows, cols):
    spec = mask_image_blockwise((rows, cols), p, np.random.default_rng(seed))
    assert spec.indices.size >= math.ceil(p * rows * cols - 1e-9)
    assert np.all((spec.indices >= 0) & (spec.indices < rows * cols))


@given(seed=st.integers(0, 2**32 - 1))
def test_blockwise_blocks_respect_shape_limits(seed):
    spec = mask_image_blockwise((8, 8), 0.5, np.random.default_rng(seed))
    assert not spec.fallback
    covered = np.zeros((8, 8), dtype=bool)
    for top, left, h, w in spec.blocks:
        assert h * w >= 4 and 0.3 <= h / w <= 1 / 0.3
        covered[top:top + h, left:left + w] = True
    assert np.array_equal(np.flatnonzero(covered), spec.indices)


def test_blockwise_falls_back_on_tiny_grids(rng):
    spec = mask_image_blockwise((1, 3), 0.5, rng)
    assert spec.fallback and spec.indices.size == 2


def test_blockwise_fewer_components_than_random():
    rng = np.random.default_rng(11)
    block = np.array([count_components(mask_image_blockwise((8, 8), 0.5, rng).as_bool().reshape(8, 8))
                      for _ in range(1000)], dtype=float)
    rand = np.array([count_components(mask_image_random((8, 8), 0.5, rng).as_bool().reshape(8, 8))
                     for _ in range(1000)], dtype=float)
    # one-sided Welch z on the means
    z = (block.mean() - rand.mean()) / math.sqrt(block.var(ddof=1) / 1000 + rand.var(ddof=1) / 1000)
    assert z < -3.09


def test_gridwise_checkerboard(rng):
    spec = mask_image_gridwise((4, 4), 0.5, rng)
    m = spec.as_bool().reshape(4, 4)
    assert m.sum() == 8
    assert count_components(m) == 8
    with pytest.raises(ValueError):
        mask_image_gridwise((4, 4), 0.0, rng)


def test_gridwise_stride(rng):
    spec = mask_image_gridwise((4, 4), 0.25, rng)
    assert np.all(np.diff(spec.indices) == 4)


def test_dispatch_and_batch(rng):
    masks, specs = mask_image_batch("random", (4, 4), 0.5, 5, rng)
    assert masks.shape == (5, 16) and np.all(masks.sum(axis=1) == 8)
    assert all(s.strategy == "random" for s in specs)
    with pytest.raises(ValueError):
        mask_image("spiral", (4, 4), 0.5, rng)


def test_mask_spec_json_round_trip(rng):
    spec = mask_image_blockwise((8, 8), 0.5, rng)
    again = MaskSpec.from_json(spec.to_json())
    assert np.array_equal(again.indices, spec.indices) and again.total == 64
    with pytest.raises(ValueError):
        MaskSpec(np.array([70]), 64, "random", 0.5)


def test_same_seed_same_masks():
    a = mask_image_batch("blockwise", (8, 8), 0.5, 10, np.random.default_rng(3))[0]
    b = mask_image_batch("blockwise", (8, 8), 0.5, 10, np.random.default_rng(3))[0]
    assert np.array_equal(a, b)
