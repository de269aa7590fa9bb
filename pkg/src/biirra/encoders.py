"""Image encoder, shared text encoder, and cross-attention interaction encoder."""

from __future__ import annotations

import collections
import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .tensor_core import nn, ops
from .tensor_core.nn import ParamStore, apply_layer_norm, apply_linear, apply_mlp, attention_block
from .tensor_core.tensor import Parameter, Tensor

PAD_ID, CLS_ID, MASK_ID = 0, 1, 2
CHECKPOINT_VERSION = "biirra-ckpt-1"


@dataclass
class ModelConfig:
    dim: int = 64
    heads: int = 4
    uni_layers: int = 2
    fusion_layers: int = 2
    patch_grid: tuple = (8, 8)
    patch_dim: int = 8
    max_text_len: int = 16
    vocab_size: int = 128
    proj_dim: int = 32
    mlp_ratio: int = 4
    init_std: float = 0.02
    tau_init: float = 0.07
    # literal reading of the MLM fusion: text queries attend to text keys/values
    mlm_kv_text: bool = False
    seed: int = 0

    def __post_init__(self):
        self.patch_grid = tuple(int(v) for v in self.patch_grid)
        for name in ("dim", "heads", "uni_layers", "fusion_layers", "patch_dim", "vocab_size", "proj_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.dim % self.heads:
            raise ValueError(f"heads={self.heads} must divide dim={self.dim}")
        if self.max_text_len < 3:
            raise ValueError("max_text_len must be at least 3")
        if self.vocab_size <= MASK_ID:
            raise ValueError("vocab must hold the reserved PAD, CLS and MASK ids")
        if len(self.patch_grid) != 2 or min(self.patch_grid) <= 0:
            raise ValueError("patch_grid must be (rows, cols) with positive sizes")

    @property
    def num_patches(self):
        return self.patch_grid[0] * self.patch_grid[1]

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["patch_grid"] = list(self.patch_grid)
        return d


@dataclass
class EncodedSequence:
    """Batched encoder output: position 0 of ``states`` is the CLS slot."""

    states: Tensor
    key_mask: np.ndarray
    modality: str
    language: str | None = None
    image_mask: np.ndarray | None = None

    @property
    def cls(self):
        return ops.getitem(self.states, (slice(None), 0))

    @property
    def tokens(self):
        return ops.getitem(self.states, (slice(None), slice(1, None)))

    @property
    def batch(self):
        return self.states.shape[0]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return EncodedSequence(
            ops.getitem(self.states, idx), self.key_mask[idx], self.modality, self.language,
            None if self.image_mask is None else self.image_mask[idx],
        )


def cat_sequences(seqs):
    """Stack several encodings along the batch axis (shared-parameter batching)."""
    masks = [s.image_mask for s in seqs]
    image_mask = None
    if any(m is not None for m in masks):
        image_mask = np.concatenate([
            m if m is not None else np.zeros((s.batch, s.states.shape[1] - 1), dtype=bool)
            for s, m in zip(seqs, masks)
        ])
    return EncodedSequence(
        ops.concat([s.states for s in seqs], axis=0),
        np.concatenate([s.key_mask for s in seqs]),
        seqs[0].modality,
        seqs[0].language,
        image_mask,
    )


@dataclass
class FusionOutput:
    states: Tensor
    query_modality: str

    @property
    def cls(self):
        return ops.getitem(self.states, (slice(None), 0))

    @property
    def tokens(self):
        return ops.getitem(self.states, (slice(None), slice(1, None)))


@dataclass
class Model:
    config: ModelConfig
    params: ParamStore = field(repr=False, default=None)
    counters: collections.Counter = field(repr=False, default_factory=collections.Counter)

    def __post_init__(self):
        if self.params is None:
            self.params = build_params(self.config)
        self._tree = _param_tree(self.params, self.config)

    # -- unimodal encoders ---------------------------------------------------

    def encode_image(self, features, mask=None):
        """Encode patch features (B, M, f); ``mask`` (B, M) swaps rows for the mask token."""
        cfg = self.config
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (cfg.num_patches, cfg.patch_dim):
            raise ValueError(f"image of shape {x.shape[1:]} does not match grid "
                             f"{cfg.patch_grid} x {cfg.patch_dim}")
        b = x.shape[0]
        t = self._tree["image"]
        h = apply_linear(Tensor(x), t["patch"])
        if mask is not None:
            mask = np.asarray(mask, dtype=bool).reshape(b, cfg.num_patches)
            if mask.any():
                h = ops.replace_rows(h, mask, t["mask_token"])
            self.counters["encode_image_masked"] += 1
        else:
            self.counters["encode_image_plain"] += 1
        cls = ops.expand(ops.reshape(t["cls"], (1, cfg.dim)), b)
        h = ops.concat([cls, h], axis=1) + t["pos"]
        for blk in t["layers"]:
            h = attention_block(h, h, blk, cfg.heads)
        h = apply_layer_norm(h, t["ln"])
        return EncodedSequence(h, np.ones((b, cfg.num_patches + 1), dtype=bool), "image", None,
                               None if mask is None else mask)

    def encode_text(self, token_ids, language=None):
        """Encode id rows (B, n<=L) with CLS at position 0; PAD keys are masked out."""
        cfg = self.config
        ids = np.asarray(token_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        if ids.shape[1] > cfg.max_text_len:
            raise ValueError(f"text of length {ids.shape[1]} exceeds L={cfg.max_text_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
            raise ValueError("token id outside the vocabulary")
        t = self._tree["text"]
        n = ids.shape[1]
        key_mask = ids != PAD_ID
        h = ops.embedding(t["embed"], ids) + ops.getitem(t["pos"], slice(0, n))
        for blk in t["layers"]:
            h = attention_block(h, h, blk, cfg.heads, key_mask)
        h = apply_layer_norm(h, t["ln"])
        return EncodedSequence(h, key_mask, "text", language)

    # -- interaction encoder -------------------------------------------------

    def fuse(self, query, kv):
        """Self-attention on the query stream, cross-attention into ``kv``, then MLP."""
        cfg = self.config
        if query.states.shape[-1] != kv.states.shape[-1]:
            raise ValueError("fusion inputs disagree on representation dim")
        if query.batch != kv.batch:
            raise ValueError("fusion inputs disagree on batch size")
        h = query.states
        kvs = kv.states
        q_mask = None if query.key_mask.all() else query.key_mask
        kv_mask = None if kv.key_mask.all() else kv.key_mask
        for blk in self._tree["fusion"]:
            h = apply_layer_norm(h + nn.multi_head_attention(h, h, blk["self"], cfg.heads, q_mask),
                                 blk["ln1"])
            h = apply_layer_norm(h + nn.multi_head_attention(h, kvs, blk["cross"], cfg.heads, kv_mask),
                                 blk["ln2"])
            h = apply_layer_norm(h + apply_mlp(h, blk["mlp"]), blk["ln3"])
        self.counters["fuse"] += 1
        return FusionOutput(h, query.modality)

    # -- projections and heads -----------------------------------------------

    def project_global(self, cls, modality):
        """Linear projection of CLS vectors followed by L2 normalization."""
        head = self._tree["proj"]["image" if modality == "image" else "text"]
        return ops.l2_normalize(apply_linear(cls, head))

    def itm_logits(self, fused_cls):
        return apply_mlp(fused_cls, self._tree["itm"])

    def mlm_logits(self, fused_tokens):
        t = self._tree["mlm"]
        h = apply_layer_norm(ops.gelu(apply_linear(fused_tokens, t["fc1"])), t["ln"])
        return apply_linear(h, t["fc2"])

    def dmim_head(self, fused_tokens):
        return apply_mlp(fused_tokens, self._tree["dmim"])

    @property
    def log_tau(self):
        return self.params["log_tau"]

    def parameters(self):
        return list(self.params)

    def zero_grad(self):
        self.params.zero_grad()


def build_params(cfg):
    store = ParamStore(np.random.default_rng(cfg.seed), cfg.init_std)
    d, r = cfg.dim, cfg.mlp_ratio
    nn.init_linear(store, "image.patch", cfg.patch_dim, d)
    store.normal("image.cls", (d,))
    store.normal("image.pos", (cfg.num_patches + 1, d))
    store.normal("image.mask_token", (d,))
    for i in range(cfg.uni_layers):
        nn.init_attention_block(store, f"image.layer{i}", d, r)
    nn.init_layer_norm(store, "image.ln", d)

    store.normal("text.embed", (cfg.vocab_size, d))
    store.normal("text.pos", (cfg.max_text_len, d))
    for i in range(cfg.uni_layers):
        nn.init_attention_block(store, f"text.layer{i}", d, r)
    nn.init_layer_norm(store, "text.ln", d)

    for i in range(cfg.fusion_layers):
        pre = f"fusion.layer{i}"
        nn.init_attention(store, f"{pre}.self", d)
        nn.init_layer_norm(store, f"{pre}.ln1", d)
        nn.init_attention(store, f"{pre}.cross", d)
        nn.init_layer_norm(store, f"{pre}.ln2", d)
        nn.init_mlp(store, f"{pre}.mlp", d, r * d, d)
        nn.init_layer_norm(store, f"{pre}.ln3", d)

    nn.init_linear(store, "proj.image", d, cfg.proj_dim)
    nn.init_linear(store, "proj.text", d, cfg.proj_dim)
    nn.init_mlp(store, "head.itm", d, d, 2)
    nn.init_linear(store, "head.mlm.fc1", d, d)
    nn.init_layer_norm(store, "head.mlm.ln", d)
    nn.init_linear(store, "head.mlm.fc2", d, cfg.vocab_size)
    nn.init_mlp(store, "head.dmim", d, d, d)
    store.add("log_tau", np.log(cfg.tau_init))
    return store


def _param_tree(store, cfg):
    """Regroup the flat registry into the nested dicts the block helpers expect."""
    P = store.__getitem__

    def lin(pre):
        return {"w": P(f"{pre}.w"), "b": P(f"{pre}.b")}

    def ln(pre):
        return {"g": P(f"{pre}.g"), "b": P(f"{pre}.b")}

    def mlp(pre):
        return {"fc1": lin(f"{pre}.fc1"), "fc2": lin(f"{pre}.fc2")}

    def attn(pre):
        out = {k: lin(f"{pre}.w{k}") for k in ("q", "v", "o")}
        out["k"] = {"w": P(f"{pre}.wk.w"), "b": None}
        return out

    def block(pre):
        return {"attn": attn(f"{pre}.attn"), "ln": ln(f"{pre}.ln"), "mlp": mlp(f"{pre}.mlp")}

    return {
        "image": {
            "patch": lin("image.patch"),
            "cls": P("image.cls"),
            "pos": P("image.pos"),
            "mask_token": P("image.mask_token"),
            "layers": [block(f"image.layer{i}") for i in range(cfg.uni_layers)],
            "ln": ln("image.ln"),
        },
        "text": {
            "embed": P("text.embed"),
            "pos": P("text.pos"),
            "layers": [block(f"text.layer{i}") for i in range(cfg.uni_layers)],
            "ln": ln("text.ln"),
        },
        "fusion": [
            {
                "self": attn(f"fusion.layer{i}.self"),
                "ln1": ln(f"fusion.layer{i}.ln1"),
                "cross": attn(f"fusion.layer{i}.cross"),
                "ln2": ln(f"fusion.layer{i}.ln2"),
                "mlp": mlp(f"fusion.layer{i}.mlp"),
                "ln3": ln(f"fusion.layer{i}.ln3"),
            }
            for i in range(cfg.fusion_layers)
        ],
        "proj": {"image": lin("proj.image"), "text": lin("proj.text")},
        "itm": mlp("head.itm"),
        "mlm": {"fc1": lin("head.mlm.fc1"), "ln": ln("head.mlm.ln"), "fc2": lin("head.mlm.fc2")},
        "dmim": mlp("head.dmim"),
    }


def reachable_parameters(out):
    """Parameters with a gradient path into ``out`` (walks the recorded graph)."""
    found = {}
    stack = [out]
    seen = set()
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        if isinstance(node, Parameter):
            found[node.name] = node
        stack.extend(node._parents)
    return found


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(model, path, extra=None):
    doc = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": {name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
                   for name, p in model.params.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    cfg = ModelConfig(**doc["config"])
    model = Model(cfg)
    stored = doc["params"]
    missing = set(model.params.names()) ^ set(stored)
    if missing:
        raise ValueError(f"checkpoint parameter set mismatch: {sorted(missing)[:5]}")
    for name, p in model.params.items():
        entry = stored[name]
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != p.shape:
            raise ValueError(f"shape mismatch for {name}")
        p.data[...] = arr
    return model, doc.get("extra", {})
