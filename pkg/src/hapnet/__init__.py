"""RGB-thermal scene parsing with a hybrid asymmetric encoder (HAPNet-style).

A ConvNeXt-style descriptor extracts multi-scale spatial priors from both
modalities while a ViT trunk carries global context; the two streams are
fused progressively by cross-attention adapters and decoded with a
mask-classification head.
"""

from .config import (
    AttentionKind,
    ConfigError,
    FallbackFusion,
    Modality,
    ModelConfig,
    Routing,
    TokenLayout,
    seed_all,
    token_layout,
    validate_config,
)
from .model import HapNet

__version__ = "0.1.0"

__all__ = [
    "AttentionKind",
    "ConfigError",
    "FallbackFusion",
    "HapNet",
    "Modality",
    "ModelConfig",
    "Routing",
    "TokenLayout",
    "seed_all",
    "token_layout",
    "validate_config",
]
