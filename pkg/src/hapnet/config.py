"""Model configuration, token-layout arithmetic and deterministic seeding.

Every other module derives its shapes from ``ModelConfig`` and
``TokenLayout``; a validated config is immutable and safe to share.
"""

import json
import random
from dataclasses import dataclass, fields, replace
from enum import Enum
from pathlib import Path

import numpy as np
import torch

# Strides of the three spatial-prior scales and the trunk patch size.
PRIOR_STRIDES = (8, 16, 32)
PATCH_SIZE = 16
MAX_STRIDE = 32


class ConfigError(ValueError):
    """Raised when a ModelConfig violates one of its invariants."""


class Modality(str, Enum):
    RGBT = "rgb+t"
    RGB = "rgb"
    THERMAL = "thermal"


# Input routing strategies: which modalities feed the ViT trunk (VFM side)
# and which feed the spatial-prior descriptor (CSPD side).
_ROUTING_TABLE = {
    "A": (Modality.RGBT, Modality.RGBT),
    "B": (Modality.RGBT, Modality.RGB),
    "C": (Modality.RGBT, Modality.THERMAL),
    "D": (Modality.RGB, Modality.RGBT),
    "E": (Modality.RGB, Modality.RGB),
    "F": (Modality.RGB, Modality.THERMAL),
    "G": (Modality.THERMAL, Modality.RGBT),
    "H": (Modality.THERMAL, Modality.RGB),
    "I": (Modality.THERMAL, Modality.THERMAL),
}


class Routing(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    D = "D"
    E = "E"
    F = "F"
    G = "G"
    H = "H"
    I = "I"

    @property
    def vfm(self) -> Modality:
        return _ROUTING_TABLE[self.value][0]

    @property
    def cspd(self) -> Modality:
        return _ROUTING_TABLE[self.value][1]


class AttentionKind(str, Enum):
    STANDARD = "standard"
    DEFORMABLE = "deformable"


class FallbackFusion(str, Enum):
    SUMMATION = "summation"


@dataclass(frozen=True)
class TokenLayout:
    """Token counts for one input resolution.

    The trunk works on the stride-16 patch grid; the spatial prior is the
    flat concatenation of the stride-8/16/32 maps in that order, row-major
    within each map.
    """

    vit_tokens: int
    vit_grid: tuple[int, int]
    prior_tokens_per_scale: tuple[int, int, int]
    prior_shapes: tuple[tuple[int, int], ...]
    scale_offsets: tuple[int, int, int]
    prior_total: int


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Frozen after ``validate_config``.

    ``num_classes`` counts the "no object" class, so real classes are
    ``num_classes - 1``. ``trunk_depth`` gives blocks per trunk stage; a
    zero entry makes that stage a no-op (useful for tests).
    """

    height: int = 64
    width: int = 64
    embed_dim: int = 64
    trunk_depth: tuple[int, int, int, int] = (2, 2, 2, 2)
    trunk_heads: int = 4
    cspd_channels: tuple[int, int, int] = (32, 64, 128)
    num_queries: int = 16
    decoder_dim: int = 64
    num_classes: int = 10
    attention_kind: AttentionKind = AttentionKind.STANDARD
    kappa_init: float = 0.0
    input_routing: Routing = Routing.D
    glca_enabled: bool = True
    ccg_enabled: bool = True
    fallback_fusion: FallbackFusion = FallbackFusion.SUMMATION
    seed: int = 0
    # Implementation knobs (defaults documented in the README).
    decoder_layers: int = 3
    cspd_depths: tuple[int, int, int] = (1, 1, 1)
    deform_points: int = 4
    ccg_ffn_mult: int = 2

    def __post_init__(self):
        # Coerce JSON-friendly forms so round-tripped configs compare equal.
        object.__setattr__(self, "trunk_depth", tuple(self.trunk_depth))
        object.__setattr__(self, "cspd_channels", tuple(self.cspd_channels))
        object.__setattr__(self, "cspd_depths", tuple(self.cspd_depths))
        object.__setattr__(self, "attention_kind", AttentionKind(self.attention_kind))
        object.__setattr__(self, "input_routing", Routing(self.input_routing))
        object.__setattr__(self, "fallback_fusion", FallbackFusion(self.fallback_fusion))

    @property
    def num_real_classes(self) -> int:
        return self.num_classes - 1

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Enum):
                v = v.value
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def replace(self, **kwargs) -> "ModelConfig":
        return replace(self, **kwargs)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(cfg: ModelConfig) -> ModelConfig:
    """Check every ModelConfig invariant; return the config unchanged.

    Raises ConfigError naming the offending field. Idempotent.
    """
    _require(cfg.height % MAX_STRIDE == 0, f"H not divisible by {MAX_STRIDE}: {cfg.height}")
    _require(cfg.width % MAX_STRIDE == 0, f"W not divisible by {MAX_STRIDE}: {cfg.width}")
    _require(cfg.height > 0, f"H must be positive: {cfg.height}")
    _require(cfg.width > 0, f"W must be positive: {cfg.width}")
    _require(cfg.embed_dim >= 1, f"embed_dim must be >= 1: {cfg.embed_dim}")
    _require(cfg.decoder_dim >= 1, f"decoder_dim must be >= 1: {cfg.decoder_dim}")
    _require(cfg.num_queries >= 1, f"num_queries must be >= 1: {cfg.num_queries}")
    _require(cfg.num_classes >= 2, f"num_classes must be >= 2 (one real class plus no-object): {cfg.num_classes}")
    _require(len(cfg.trunk_depth) == 4, f"trunk_depth must have exactly 4 entries: {cfg.trunk_depth}")
    _require(all(d >= 0 for d in cfg.trunk_depth), f"trunk_depth entries must be >= 0: {cfg.trunk_depth}")
    _require(cfg.trunk_heads >= 1, f"trunk_heads must be >= 1: {cfg.trunk_heads}")
    _require(
        cfg.embed_dim % cfg.trunk_heads == 0,
        f"embed_dim not divisible by trunk_heads: {cfg.embed_dim} % {cfg.trunk_heads}",
    )
    _require(len(cfg.cspd_channels) == 3, f"cspd_channels must have exactly 3 entries: {cfg.cspd_channels}")
    _require(all(c >= 1 for c in cfg.cspd_channels), f"cspd_channels entries must be >= 1: {cfg.cspd_channels}")
    _require(len(cfg.cspd_depths) == 3, f"cspd_depths must have exactly 3 entries: {cfg.cspd_depths}")
    _require(all(d >= 1 for d in cfg.cspd_depths), f"cspd_depths entries must be >= 1: {cfg.cspd_depths}")
    _require(cfg.decoder_layers >= 0, f"decoder_layers must be >= 0: {cfg.decoder_layers}")
    _require(cfg.deform_points >= 1, f"deform_points must be >= 1: {cfg.deform_points}")
    _require(cfg.ccg_ffn_mult >= 1, f"ccg_ffn_mult must be >= 1: {cfg.ccg_ffn_mult}")
    return cfg


def token_layout(cfg: ModelConfig) -> TokenLayout:
    """Token counts and scale offsets implied by the input resolution."""
    h, w = cfg.height, cfg.width
    grid = (h // PATCH_SIZE, w // PATCH_SIZE)
    shapes = tuple((h // s, w // s) for s in PRIOR_STRIDES)
    counts = tuple(sh * sw for sh, sw in shapes)
    offsets = (0, counts[0], counts[0] + counts[1])
    return TokenLayout(
        vit_tokens=grid[0] * grid[1],
        vit_grid=grid,
        prior_tokens_per_scale=counts,
        prior_shapes=shapes,
        scale_offsets=offsets,
        prior_total=sum(counts),
    )


def seed_all(seed: int) -> None:
    """Seed every RNG that parameter init or data shuffling may touch."""
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)
