"""Run configuration: every hyperparameter, ablation switch and seed that
governs a training or evaluation run, with a plain-text ``key = value``
file format (dotted keys; CLI overrides beat file values)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    """Bad configuration key, value or combination."""


@dataclass
class RunConfig:
    seed: int = 0
    # dims
    image_size: int = 64
    patch: int = 4
    c1: int = 16
    lang_dim: int = 32          # word-feature width D
    joint_dim: int = 32         # WPA joint embedding width
    query_dim: int = 32         # decoder query width
    seg_dim: int = 16           # pixel-embedding width of the seg head
    num_queries: int = 16       # mask proposals N
    t_max: int = 16
    heads: int = 2
    fusion_heads: int = 2
    decoder_layers: int = 2
    mlp_ratio: int = 2
    # optimizer
    lr0: float = 3e-5
    lr_end: float = 1.5e-5
    max_decay_epoch: int = 25
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    poly_power: float = 0.9
    # loss
    aux_weight: float = 0.1     # lambda
    aux_temperature: float = 0.07
    aux_normalize: bool = True
    # ablation switches
    wpa_mode: str = "bi"        # bi | uni | off
    wpa_stages: tuple = (1, 2, 3, 4)
    sma_enabled: bool = True
    aux_enabled: bool = True
    seg_norm_order: str = "relu_bn"   # relu_bn | bn_relu
    # schedule
    epochs: int = 30
    batch_size: int = 16

    def stage_channels(self) -> tuple:
        return tuple(self.c1 * (2 ** i) for i in range(4))

    def validate(self) -> "RunConfig":
        if self.patch not in (1, 2, 4):
            raise ConfigError(f"dims.patch must be 1, 2 or 4, got {self.patch}")
        if self.image_size % (self.patch * 8):
            raise ConfigError(
                f"dims.image={self.image_size} must be divisible by patch*8={self.patch * 8}")
        for name in ("c1", "lang_dim", "joint_dim", "query_dim", "seg_dim",
                     "num_queries", "t_max", "heads", "fusion_heads",
                     "decoder_layers", "mlp_ratio", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lang_dim % self.heads or self.lang_dim % self.fusion_heads:
            raise ConfigError("lang_dim must be divisible by heads and fusion_heads")
        if self.query_dim % self.heads:
            raise ConfigError("query_dim must be divisible by heads")
        if self.lr_end > self.lr0:
            raise ConfigError(f"opt.lr_end={self.lr_end} exceeds opt.lr0={self.lr0}")
        if self.poly_power <= 0:
            raise ConfigError("opt.poly_power must be > 0")
        if self.aux_weight < 0:
            raise ConfigError("loss.lambda must be >= 0")
        if self.wpa_mode not in ("bi", "uni", "off"):
            raise ConfigError(f"wpa.mode must be bi|uni|off, got {self.wpa_mode!r}")
        if not set(self.wpa_stages) <= {1, 2, 3, 4}:
            raise ConfigError(f"wpa.stages must be a subset of 1,2,3,4, got {self.wpa_stages}")
        if self.seg_norm_order not in ("relu_bn", "bn_relu"):
            raise ConfigError(f"seg.norm_order must be relu_bn|bn_relu, got {self.seg_norm_order!r}")
        return self


# dotted external key <-> dataclass field
KEYMAP = {
    "seed": "seed",
    "dims.image": "image_size",
    "dims.patch": "patch",
    "dims.c1": "c1",
    "dims.lang": "lang_dim",
    "dims.joint": "joint_dim",
    "dims.query": "query_dim",
    "dims.seg": "seg_dim",
    "dims.queries": "num_queries",
    "dims.tmax": "t_max",
    "dims.heads": "heads",
    "fusion.heads": "fusion_heads",
    "dims.decoder_layers": "decoder_layers",
    "dims.mlp_ratio": "mlp_ratio",
    "opt.lr0": "lr0",
    "opt.lr_end": "lr_end",
    "opt.max_decay_epoch": "max_decay_epoch",
    "opt.weight_decay": "weight_decay",
    "opt.beta1": "beta1",
    "opt.beta2": "beta2",
    "opt.eps": "adam_eps",
    "opt.poly_power": "poly_power",
    "loss.lambda": "aux_weight",
    "loss.tau": "aux_temperature",
    "aux.normalize": "aux_normalize",
    "wpa.mode": "wpa_mode",
    "wpa.stages": "wpa_stages",
    "sma.enabled": "sma_enabled",
    "aux.enabled": "aux_enabled",
    "seg.norm_order": "seg_norm_order",
    "train.epochs": "epochs",
    "train.batch": "batch_size",
}
_FIELD_TO_KEY = {v: k for k, v in KEYMAP.items()}


def _parse_value(field_type, key: str, raw: str):
    raw = raw.strip()
    try:
        if field_type is int:
            return int(raw)
        if field_type is float:
            return float(raw)
        if field_type is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if field_type is tuple:
            if not raw:
                return ()
            return tuple(int(p) for p in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse value {raw!r} for key {key!r}") from None


def apply_overrides(cfg: RunConfig, pairs) -> RunConfig:
    """Apply (dotted key, raw string value) pairs in order."""
    types = {f.name: f.type if isinstance(f.type, type) else type(getattr(cfg, f.name))
             for f in fields(cfg)}
    for key, raw in pairs:
        key = key.strip()
        if key not in KEYMAP:
            raise ConfigError(f"unknown config key {key!r}")
        fname = KEYMAP[key]
        setattr(cfg, fname, _parse_value(types[fname], key, raw))
    return cfg


def load_config(path) -> RunConfig:
    """Parse a ``key = value`` file ('#' starts a comment)."""
    cfg = RunConfig()
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        pairs.append((key, raw))
    return apply_overrides(cfg, pairs)


def resolved_text(cfg: RunConfig) -> str:
    """Canonical dotted-key rendering of a config (sorted keys)."""
    lines = []
    for f in fields(cfg):
        key = _FIELD_TO_KEY[f.name]
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(sorted(lines)) + "\n"


def config_hash(cfg: RunConfig, exclude: tuple = ()) -> str:
    """Digest of the resolved config; ``exclude`` drops keys that may
    legitimately differ (e.g. train.epochs when resuming a longer run)."""
    lines = [l for l in resolved_text(cfg).splitlines()
             if not any(l.startswith(f"{k} ") for k in exclude)]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()
