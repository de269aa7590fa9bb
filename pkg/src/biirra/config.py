"""Flat training/objective configuration with a key=value file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields


@dataclass
class TrainConfig:
    # optimisation
    steps: int = 1000
    epochs: int = 0  # when > 0, overrides ``steps`` with epochs * batches_per_epoch
    batch_size: int = 8
    lr_init: float = 1e-5
    lr_peak: float = 1e-3
    lr_final: float = 1e-4
    warmup_fraction: float = 0.05
    weight_decay: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    # joint objective
    lambda1: float = 4.0
    lambda2: float = 4.0
    p_txt: float = 0.4
    p_img: float = 0.5
    image_mask_strategy: str = "blockwise"
    itm_sampler: str = "hard"
    force_text_mask: bool = True
    dmim_all_positions: bool = False
    enable_mlm: bool = True
    enable_dmim: bool = True
    enable_aitm: bool = True
    enable_asym_mask: bool = True
    # extra image/text masking of the two ITM branches (rows of the input-masking grid)
    itm_mask_source_image: bool = False
    itm_mask_source_text: bool = False
    itm_mask_target_text: bool = False
    # model
    dim: int = 64
    heads: int = 4
    uni_layers: int = 2
    fusion_layers: int = 2
    proj_dim: int = 32
    mlp_ratio: int = 4
    mlm_kv_text: bool = False
    # evaluation
    rerank_k: int = 16
    rerank_blend: float = 0.75
    log_every: int = 1

    def __post_init__(self):
        for name in ("lr_init", "lr_peak", "lr_final"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.itm_sampler not in ("hard", "random"):
            raise ValueError("itm_sampler must be 'hard' or 'random'")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")

    @property
    def itm_mask_target_image(self):
        return self.enable_asym_mask

    @classmethod
    def published(cls, **overrides):
        """Hyper-parameters as published for full-scale fine-tuning."""
        base = dict(lr_init=1e-6, lr_peak=5e-5, lr_final=5e-6, lambda1=4.0, lambda2=4.0,
                    p_txt=0.4, p_img=0.5, batch_size=32, epochs=10,
                    uni_layers=12, fusion_layers=6)
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


def _coerce(kind, raw):
    if kind is bool or kind == "bool":
        low = str(raw).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return str(raw).strip()


def parse_overrides(pairs):
    """Turn ``{"key": "text"}`` into typed TrainConfig keyword arguments."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = _coerce(types[key], raw)
    return out


def read_config_file(path):
    """Read ``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
    return parse_overrides(pairs)


def write_config_file(path, cfg):
    with open(path, "w") as fh:
        for k, v in cfg.to_dict().items():
            fh.write(f"{k} = {v}\n")
