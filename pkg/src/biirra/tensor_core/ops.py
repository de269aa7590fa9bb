"""Differentiable operations.

Each op computes its forward value with numpy (or a kernel from
``biirra.kernels``) and returns a closure mapping the output gradient to one
gradient per parent. Broadcasting is limited to a trailing-shape operand
(biases, positional tables) spread over leading axes.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, make

CE_EPS = 1e-12
LN_EPS = 1e-5


def _sum_to(g, shape):
    """Reduce a gradient over the leading axes that were broadcast."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead < 0 or g.shape[lead:] != tuple(shape):
        raise ValueError(f"cannot reduce gradient {g.shape} to {shape}")
    return g.sum(axis=tuple(range(lead)))


def _check_suffix(big, small, what):
    if big == small:
        return
    if len(small) > len(big) or big[len(big) - len(small):] != small:
        raise ValueError(f"{what}: shape {small} does not match trailing axes of {big}")


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            a = as_tensor(a)
            return make(a.data + float(b), (a,), lambda g: (g,))
        b = Tensor(b)
    a = as_tensor(a)
    if a.ndim < b.ndim:
        a, b = b, a
    _check_suffix(a.shape, b.shape, "add")
    sb = b.shape
    return make(a.data + b.data, (a, b), lambda g: (g, _sum_to(g, sb)))


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,))


def sub(a, b):
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return add(a, -float(b))
    return add(a, neg(as_tensor(b)))


def scale(a, c):
    c = float(c)
    return make(a.data * c, (a,), lambda g: (g * c,))


def mul(a, b):
    """Elementwise product; ``b`` may be a scalar or a trailing-shape operand."""
    if not isinstance(b, Tensor):
        if np.ndim(b) == 0:
            return scale(a, b)
        b = Tensor(b)
    a = as_tensor(a)
    if a.ndim < b.ndim:
        a, b = b, a
    _check_suffix(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    sb = b.shape

    def bw(g):
        return g * bd, _sum_to(g * ad, sb)

    return make(ad * bd, (a, b), bw)


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., n, k) and ``b`` of (k, m) or (..., k, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul dimension mismatch {a.shape} @ {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ValueError(f"matmul batch mismatch {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return make(ad @ bd, (a, b), bw)


def linear(x, weight, bias=None):
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


def exp(a):
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return make(np.log(ad), (a,), lambda g: (g / ad,))


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    out = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make(out, (a,), bw)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis), 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def permute(a, axes):
    inv = np.argsort(axes)
    return make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def transpose_last(a):
    return make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def getitem(a, idx):
    """Basic or integer-array indexing; the backward scatters with ``np.add.at``."""
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return make(a.data[idx], (a,), bw)


def expand(a, n):
    """Stack ``n`` copies of ``a`` along a new leading axis."""
    return make(np.broadcast_to(a.data, (n,) + a.shape).copy(), (a,), lambda g: (g.sum(axis=0),))


def embedding(weight, ids):
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise IndexError("embedding id out of range")
    vocab = weight.shape

    def bw(g):
        out = np.zeros(vocab)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, vocab[1]))
        return (out,)

    return make(weight.data[ids], (weight,), bw)


def replace_rows(x, mask, token):
    """Swap rows of ``x`` (B, n, d) flagged in ``mask`` (B, n) for ``token`` (d,)."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != x.shape[:-1]:
        raise ValueError(f"mask shape {m.shape} does not match rows {x.shape[:-1]}")
    out = np.where(m[..., None], token.data, x.data)

    def bw(g):
        return np.where(m[..., None], 0.0, g), g[m].sum(axis=0)

    return make(out, (x, token), bw)


def add_constant(a, const):
    """Add a non-differentiable array that broadcasts against ``a``."""
    const = np.asarray(const, dtype=np.float64)
    return make(a.data + const, (a,), lambda g: (g,))


def detach(a):
    return Tensor(a.data)


# ---------------------------------------------------------------------------
# nonlinearities and normalizers
# ---------------------------------------------------------------------------

def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def gelu(a):
    x = np.ascontiguousarray(a.data)
    return make(kernels.gelu_fwd(x), (a,), lambda g: (kernels.gelu_bwd(x, np.ascontiguousarray(g)),))


def softmax(a, axis=-1):
    a = as_tensor(a)
    nd = a.ndim
    if not -nd <= axis < nd:
        raise ValueError(f"softmax axis {axis} out of range for {nd}-d tensor")
    axis %= nd
    if axis != nd - 1:
        perm = list(range(nd))
        perm[axis], perm[-1] = perm[-1], perm[axis]
        return permute(softmax(permute(a, perm), -1), perm)
    shape = a.shape
    y = kernels.softmax_fwd(_rows(a.data)).reshape(shape)

    def bw(g):
        return (kernels.softmax_bwd(_rows(y), _rows(g)).reshape(shape),)

    return make(y, (a,), bw)


def layer_norm(x, gain, bias, eps=LN_EPS):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    shape = x.shape
    y, xhat, rstd = kernels.layer_norm_fwd(_rows(x.data), gain.data, bias.data, eps)

    def bw(g):
        gx, gg, gb = kernels.layer_norm_bwd(_rows(g), xhat, rstd, gain.data)
        return gx.reshape(shape), gg, gb

    return make(y.reshape(shape), (x, gain, bias), bw)


def l2_normalize(a, eps=0.0):
    """Scale each row to unit L2 norm; all-zero rows map to zero."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    safe = np.where(norm > eps, norm, 1.0)
    y = np.where(norm > eps, x / safe, 0.0)

    def bw(g):
        gx = (g - y * (g * y).sum(axis=-1, keepdims=True)) / safe
        return (np.where(norm > eps, gx, 0.0),)

    return make(y, (a,), bw)


def cosine_similarity(a, b):
    """Row-wise cosine similarity over the last axis.

    A row pair with a zero-norm member has similarity 0 and passes no gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"cosine_similarity shape mismatch {a.shape} vs {b.shape}")
    x, y = a.data, b.data
    nx = np.sqrt((x * x).sum(axis=-1))
    ny = np.sqrt((y * y).sum(axis=-1))
    ok = (nx > 0) & (ny > 0)
    nx_s = np.where(ok, nx, 1.0)
    ny_s = np.where(ok, ny, 1.0)
    dot = (x * y).sum(axis=-1)
    cos = np.where(ok, dot / (nx_s * ny_s), 0.0)

    def bw(g):
        ge = np.where(ok, g, 0.0)[..., None]
        c = cos[..., None]
        ga = ge * (y / (nx_s * ny_s)[..., None] - c * x / (nx_s ** 2)[..., None])
        gb = ge * (x / (nx_s * ny_s)[..., None] - c * y / (ny_s ** 2)[..., None])
        return ga, gb

    return make(cos, (a, b), bw)


def cross_entropy(pred, target):
    """Mean over rows of ``-sum(target * log(pred + eps))``.

    ``target`` is a constant distribution (array or detached tensor).
    """
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"cross_entropy shape mismatch {pred.shape} vs {t.shape}")
    if np.any(t < 0):
        raise ValueError("cross_entropy target has negative mass")
    p = pred.data
    rows = max(1, p.size // p.shape[-1]) if p.ndim else 1
    loss = -(t * np.log(p + CE_EPS)).sum() / rows

    def bw(g):
        return (-g * t / (p + CE_EPS) / rows,)

    return make(np.asarray(loss), (pred,), bw)
