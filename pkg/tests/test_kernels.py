import os
import subprocess
import sys

import numpy as np
import pytest

from biirra import kernels

pytestmark = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not importable")


def _pair(name):
    k = kernels.KERNELS[name]
    return k.numba_impl, k.numpy_impl


def test_layer_norm_backends_agree(rng):
    x = rng.normal(size=(7, 5)) * 3
    g, b = rng.normal(size=5), rng.normal(size=5)
    nb, npy = _pair("layer_norm_fwd")
    for u, v in zip(nb(x, g, b, 1e-5), npy(x, g, b, 1e-5)):
        assert np.allclose(u, v, rtol=1e-13, atol=1e-13)
    y, xhat, rstd = npy(x, g, b, 1e-5)
    gy = rng.normal(size=x.shape)
    nb, npy = _pair("layer_norm_bwd")
    for u, v in zip(nb(gy, xhat, rstd, g), npy(gy, xhat, rstd, g)):
        assert np.allclose(u, v, rtol=1e-12, atol=1e-12)


def test_softmax_backends_agree(rng):
    x = rng.normal(size=(6, 9)) * 50
    nb, npy = _pair("softmax_fwd")
    y = npy(x)
    assert np.allclose(nb(x), y, rtol=1e-13, atol=1e-300)
    gy = rng.normal(size=x.shape)
    nb, npy = _pair("softmax_bwd")
    assert np.allclose(nb(y, gy), npy(y, gy), rtol=1e-12, atol=1e-14)


def test_gelu_backends_agree(rng):
    x = np.concatenate([rng.normal(size=200) * 4, [-800.0, -30.0, 0.0, 30.0, 800.0]])
    nb, npy = _pair("gelu_fwd")
    assert np.allclose(nb(x), npy(x), rtol=1e-13, atol=1e-14)
    gy = rng.normal(size=x.shape)
    nb, npy = _pair("gelu_bwd")
    assert np.allclose(nb(x, gy), npy(x, gy), rtol=1e-12, atol=1e-13)


def test_components_backends_agree(rng):
    nb, npy = _pair("count_components")
    for _ in range(50):
        m = rng.random((6, 7)) < 0.45
        assert nb(m) == npy(m)
    assert npy(np.zeros((3, 3), dtype=bool)) == 0
    checker = (np.add.outer(np.arange(4), np.arange(4)) % 2).astype(bool)
    assert npy(checker) == 8  # diagonal neighbours do not connect


def test_average_precision_backends_agree(rng):
    hits = (rng.random((30, 12)) < 0.3).astype(np.float64)
    nb, npy = _pair("average_precision")
    assert np.allclose(nb(hits), npy(hits), rtol=0, atol=1e-15)


def test_env_flag_selects_numpy():
    code = "from biirra import kernels; print(kernels.numba_enabled())"
    env = dict(os.environ, BIIRRA_NUMBA="0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
