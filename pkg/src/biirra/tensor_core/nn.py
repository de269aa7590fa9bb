"""Parameter registry and transformer building blocks."""

from __future__ import annotations

import math

import numpy as np

from . import ops
from .tensor import Parameter

NEG_INF = -1e9


class ParamStore:
    """Ordered name -> Parameter registry; every parameter is registered once."""

    def __init__(self, rng=None, std=0.02):
        self._params = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.std = std

    def add(self, name, data):
        if name in self._params:
            raise KeyError(f"parameter {name!r} registered twice")
        p = Parameter(np.array(data, dtype=np.float64), name)
        self._params[name] = p
        return p

    def normal(self, name, shape, std=None):
        std = self.std if std is None else std
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None


def init_linear(store, prefix, d_in, d_out):
    return {"w": store.normal(f"{prefix}.w", (d_in, d_out)), "b": store.zeros(f"{prefix}.b", (d_out,))}


def init_layer_norm(store, prefix, d):
    return {"g": store.ones(f"{prefix}.g", (d,)), "b": store.zeros(f"{prefix}.b", (d,))}


def init_attention(store, prefix, d):
    # no key bias: it shifts every score of a query equally and so never receives gradient
    return {
        "q": init_linear(store, f"{prefix}.wq", d, d),
        "k": {"w": store.normal(f"{prefix}.wk.w", (d, d)), "b": None},
        "v": init_linear(store, f"{prefix}.wv", d, d),
        "o": init_linear(store, f"{prefix}.wo", d, d),
    }


def init_mlp(store, prefix, d_in, d_hidden, d_out):
    return {"fc1": init_linear(store, f"{prefix}.fc1", d_in, d_hidden),
            "fc2": init_linear(store, f"{prefix}.fc2", d_hidden, d_out)}


def init_attention_block(store, prefix, d, mlp_ratio=4):
    return {
        "attn": init_attention(store, f"{prefix}.attn", d),
        "ln": init_layer_norm(store, f"{prefix}.ln", d),
        "mlp": init_mlp(store, f"{prefix}.mlp", d, mlp_ratio * d, d),
    }


def apply_linear(x, p):
    return ops.linear(x, p["w"], p["b"])


def apply_layer_norm(x, p):
    return ops.layer_norm(x, p["g"], p["b"])


def apply_mlp(x, p):
    return apply_linear(ops.gelu(apply_linear(x, p["fc1"])), p["fc2"])


def key_bias(key_mask):
    """Additive attention bias (B, 1, 1, K) that removes invalid keys."""
    if key_mask is None:
        return None
    km = np.asarray(key_mask, dtype=bool)
    return np.where(km, 0.0, NEG_INF)[:, None, None, :]


def multi_head_attention(q_in, kv_in, p, heads, key_mask=None):
    """Scaled dot-product attention of ``q_in`` (B, Q, d) over ``kv_in`` (B, K, d)."""
    if q_in.ndim != 3 or kv_in.ndim != 3:
        raise ValueError("attention inputs must be (batch, length, dim)")
    b, nq, d = q_in.shape
    bk, nk, dk = kv_in.shape
    if dk != d or bk != b:
        raise ValueError(f"attention dimension mismatch {q_in.shape} vs {kv_in.shape}")
    if d % heads:
        raise ValueError(f"{heads} heads do not divide dim {d}")
    dh = d // heads

    def split(x, n):
        return ops.permute(ops.reshape(x, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(apply_linear(q_in, p["q"]), nq)
    k = split(apply_linear(kv_in, p["k"]), nk)
    v = split(apply_linear(kv_in, p["v"]), nk)
    scores = ops.scale(ops.matmul(q, ops.transpose_last(k)), 1.0 / math.sqrt(dh))
    bias = key_bias(key_mask)
    if bias is not None:
        scores = ops.add_constant(scores, bias)
    att = ops.softmax(scores, axis=-1)
    ctx = ops.reshape(ops.permute(ops.matmul(att, v), (0, 2, 1, 3)), (b, nq, d))
    return apply_linear(ctx, p["o"])


def attention_block(q_in, kv_in, params, heads, key_mask=None):
    """Attention, residual + layer norm, then a GELU MLP with its own residual.

    With ``kv_in is q_in`` this is an ordinary self-attention block.
    """
    h = apply_layer_norm(q_in + multi_head_attention(q_in, kv_in, params["attn"], heads, key_mask),
                         params["ln"])
    return h + apply_mlp(h, params["mlp"])
