"""Progressive interaction between the spatial-prior tokens and the ViT trunk.

Each trunk stage is bracketed by two cross-attention adapters. The
injector folds prior detail into the trunk tokens through a per-stage
learnable gate that starts at zero, so an untouched trunk is recovered at
init. The extractor refreshes the prior tokens from the trunk output and
runs them through a small residual FFN. After the last stage the prior
sequence is split back into feature maps and an extra 1/4-scale map is
produced with a stride-2 transposed convolution.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AttentionKind, FallbackFusion, ModelConfig, TokenLayout, token_layout
from .attention import CrossAttention, grid_reference_points
from .cspd import SpatialPriorDescriptor
from .vit import Mlp, ViTTrunk


@dataclass
class FusedPyramid:
    """Per-scale feature maps, all with ``embed_dim`` channels."""

    f4: torch.Tensor
    f8: torch.Tensor
    f16: torch.Tensor
    f32: torch.Tensor

    def as_list(self) -> list[torch.Tensor]:
        return [self.f4, self.f8, self.f16, self.f32]


def split_prior(prior: torch.Tensor, layout: TokenLayout) -> list[torch.Tensor]:
    """Split a flattened prior sequence into (B, D, h, w) maps per scale."""
    if prior.shape[1] != layout.prior_total:
        raise ValueError(f"expected {layout.prior_total} prior tokens, got {prior.shape[1]}")
    b, _, d = prior.shape
    maps = []
    for (hh, ww), count in zip(layout.prior_shapes, layout.prior_tokens_per_scale):
        chunk, prior = prior[:, :count], prior[:, count:]
        maps.append(chunk.transpose(1, 2).reshape(b, d, hh, ww))
    return maps


class GlobalLocalInjector(nn.Module):
    """Adds prior context to trunk tokens, gated by a zero-initialized scalar."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm_query = nn.LayerNorm(cfg.embed_dim)
        self.norm_kv = nn.LayerNorm(cfg.embed_dim)
        self.attn = CrossAttention(
            cfg.embed_dim,
            cfg.trunk_heads,
            cfg.attention_kind,
            num_levels=3,
            num_points=cfg.deform_points,
        )
        self.kappa = nn.Parameter(torch.tensor(float(cfg.kappa_init)))

    def forward(
        self,
        trunk_tokens: torch.Tensor,
        prior_tokens: torch.Tensor,
        kv_shapes: list[tuple[int, int]] | None = None,
        ref_points: torch.Tensor | None = None,
    ) -> torch.Tensor:
        attended = self.attn(
            self.norm_query(trunk_tokens),
            self.norm_kv(prior_tokens),
            kv_shapes=kv_shapes,
            ref_points=ref_points,
        )
        return trunk_tokens + self.kappa * attended


class PriorExtractor(nn.Module):
    """Refreshes prior tokens from the trunk, then a residual FFN."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm_query = nn.LayerNorm(cfg.embed_dim)
        self.norm_kv = nn.LayerNorm(cfg.embed_dim)
        self.attn = CrossAttention(
            cfg.embed_dim,
            cfg.trunk_heads,
            cfg.attention_kind,
            num_levels=1,
            num_points=cfg.deform_points,
        )
        self.norm_ffn = nn.LayerNorm(cfg.embed_dim)
        self.ffn = Mlp(cfg.embed_dim, cfg.ccg_ffn_mult * cfg.embed_dim)

    def forward(
        self,
        prior_tokens: torch.Tensor,
        trunk_tokens: torch.Tensor,
        kv_shapes: list[tuple[int, int]] | None = None,
        ref_points: torch.Tensor | None = None,
    ) -> torch.Tensor:
        attended = self.attn(
            self.norm_query(prior_tokens),
            self.norm_kv(trunk_tokens),
            kv_shapes=kv_shapes,
            ref_points=ref_points,
        )
        prior_tokens = prior_tokens + attended
        return prior_tokens + self.ffn(self.norm_ffn(prior_tokens))


class HybridEncoder(nn.Module):
    """CNN prior branch plus ViT trunk with per-stage token interaction.

    ``forward`` returns the fused pyramid; ``forward_with_states`` also
    returns the trunk and prior sequences after every stage, which is what
    the init-identity checks inspect.
    """

    NUM_STAGES = 4

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.layout = token_layout(cfg)
        self.cspd = SpatialPriorDescriptor(cfg)
        self.trunk = ViTTrunk(cfg)
        if cfg.glca_enabled:
            self.injectors = nn.ModuleList(GlobalLocalInjector(cfg) for _ in range(self.NUM_STAGES))
        else:
            self.injectors = None
        if cfg.ccg_enabled:
            self.extractors = nn.ModuleList(PriorExtractor(cfg) for _ in range(self.NUM_STAGES))
        else:
            self.extractors = None
        self.upconv = nn.ConvTranspose2d(cfg.embed_dim, cfg.embed_dim, kernel_size=2, stride=2)
        prior_refs = torch.cat([grid_reference_points(s) for s in self.layout.prior_shapes])
        self.register_buffer("prior_ref_points", prior_refs, persistent=False)
        self.register_buffer(
            "trunk_ref_points", grid_reference_points(self.layout.vit_grid), persistent=False
        )

    def recover_pyramid(self, prior: torch.Tensor) -> FusedPyramid:
        f8, f16, f32 = split_prior(prior, self.layout)
        return FusedPyramid(f4=self.upconv(f8), f8=f8, f16=f16, f32=f32)

    def forward_with_states(
        self, rgb: torch.Tensor, thermal: torch.Tensor
    ) -> tuple[FusedPyramid, list[torch.Tensor], list[torch.Tensor]]:
        cfg = self.cfg
        prior = self.cspd.build_prior(rgb, thermal, cfg.input_routing.cspd, self.layout)
        tokens = self.trunk.route_input(rgb, thermal, cfg.input_routing.vfm)
        trunk_states = [tokens]
        prior_states = [prior]
        prior_shapes = list(self.layout.prior_shapes)
        for i in range(self.NUM_STAGES):
            if self.injectors is not None:
                tokens = self.injectors[i](
                    tokens, prior, kv_shapes=prior_shapes, ref_points=self.trunk_ref_points
                )
            tokens = self.trunk.run_stage(i, tokens)
            if self.extractors is not None:
                prior = self.extractors[i](
                    prior, tokens, kv_shapes=[self.layout.vit_grid], ref_points=self.prior_ref_points
                )
            trunk_states.append(tokens)
            prior_states.append(prior)
        if self.injectors is None and self.extractors is None:
            pyramid = self._fallback_pyramid(prior, tokens)
        else:
            pyramid = self.recover_pyramid(prior)
        return pyramid, trunk_states, prior_states

    def forward(self, rgb: torch.Tensor, thermal: torch.Tensor) -> FusedPyramid:
        pyramid, _, _ = self.forward_with_states(rgb, thermal)
        return pyramid

    def _fallback_pyramid(self, prior: torch.Tensor, tokens: torch.Tensor) -> FusedPyramid:
        if self.cfg.fallback_fusion is not FallbackFusion.SUMMATION:
            raise ValueError(f"unknown fallback fusion {self.cfg.fallback_fusion}")
        b, _, d = tokens.shape
        gh, gw = self.layout.vit_grid
        trunk_map = tokens.transpose(1, 2).reshape(b, d, gh, gw)
        maps = split_prior(prior, self.layout)
        fused = [
            m + F.interpolate(trunk_map, size=m.shape[-2:], mode="bilinear", align_corners=False)
            for m in maps
        ]
        f8, f16, f32 = fused
        return FusedPyramid(f4=self.upconv(f8), f8=f8, f16=f16, f32=f32)
