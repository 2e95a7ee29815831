"""Mask-classification decoder over the fused pyramid.

A small FPN refines the four pyramid levels down to a common width and
yields a dense per-pixel embedding at 1/4 scale. A stack of pre-norm
transformer layers updates learned queries against the refined 1/32,
1/16, 1/8 levels in rotation. Each query ends as a class distribution
(including a trailing no-object slot) and a mask embedding whose dot
product with the pixel embedding gives the mask logits.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AttentionKind, ModelConfig
from .attention import CrossAttention
from .phfi import FusedPyramid
from .vit import Mlp


class PixelDecoder(nn.Module):
    """Top-down refinement of the pyramid; emits attention levels and E^P."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, c = cfg.embed_dim, cfg.decoder_dim
        self.laterals = nn.ModuleList(nn.Conv2d(d, c, kernel_size=1) for _ in range(4))
        self.smooths = nn.ModuleList(nn.Conv2d(c, c, kernel_size=3, padding=1) for _ in range(4))
        self.pixel_proj = nn.Conv2d(c, c, kernel_size=1)

    def forward(self, pyramid: FusedPyramid) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Returns ([r8, r16, r32], pixel_embedding at 1/4 scale)."""
        maps = pyramid.as_list()  # f4, f8, f16, f32
        refined: list[torch.Tensor] = [None] * 4
        top = None
        for i in (3, 2, 1, 0):
            x = self.laterals[i](maps[i])
            if top is not None:
                x = x + F.interpolate(top, size=x.shape[-2:], mode="nearest")
            top = self.smooths[i](x)
            refined[i] = top
        pixel_embedding = self.pixel_proj(refined[0])
        return [refined[1], refined[2], refined[3]], pixel_embedding


class DecoderLayer(nn.Module):
    """Pre-norm cross-attention, self-attention, FFN, all residual."""

    def __init__(self, dim: int, num_heads: int, ffn_mult: int = 4):
        super().__init__()
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_memory = nn.LayerNorm(dim)
        self.cross_attn = CrossAttention(dim, num_heads, AttentionKind.STANDARD)
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = CrossAttention(dim, num_heads, AttentionKind.STANDARD)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = Mlp(dim, ffn_mult * dim)

    def forward(self, queries: torch.Tensor, memory: torch.Tensor) -> torch.Tensor:
        queries = queries + self.cross_attn(self.norm_cross(queries), self.norm_memory(memory))
        normed = self.norm_self(queries)
        queries = queries + self.self_attn(normed, normed)
        return queries + self.ffn(self.norm_ffn(queries))


@dataclass
class QueryOutputs:
    class_logits: torch.Tensor  # (B, Q, N) with no-object last
    mask_embeddings: torch.Tensor  # (B, Q, C)


class TransformerDecoder(nn.Module):
    """Learned queries attending to the refined levels coarse-to-fine.

    Layer l reads level l mod 3 of (1/32, 1/16, 1/8). There is no final
    normalization, so with zero layers the heads see the initial queries.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        c = cfg.decoder_dim
        self.query_embed = nn.Parameter(torch.empty(cfg.num_queries, c))
        nn.init.trunc_normal_(self.query_embed, std=0.02)
        self.layers = nn.ModuleList(
            DecoderLayer(c, cfg.trunk_heads) for _ in range(cfg.decoder_layers)
        )
        self.class_head = nn.Linear(c, cfg.num_classes)
        self.mask_head = nn.Sequential(
            nn.Linear(c, c), nn.GELU(), nn.Linear(c, c), nn.GELU(), nn.Linear(c, c)
        )

    def forward(self, levels: list[torch.Tensor]) -> QueryOutputs:
        """levels: [r8, r16, r32] maps of (B, C, h, w)."""
        order = [levels[2], levels[1], levels[0]]  # 1/32, 1/16, 1/8
        b = levels[0].shape[0]
        queries = self.query_embed.unsqueeze(0).expand(b, -1, -1)
        for i, layer in enumerate(self.layers):
            memory = order[i % 3].flatten(2).transpose(1, 2)
            queries = layer(queries, memory)
        return QueryOutputs(
            class_logits=self.class_head(queries), mask_embeddings=self.mask_head(queries)
        )


def predict_masks(mask_embeddings: torch.Tensor, pixel_embedding: torch.Tensor) -> torch.Tensor:
    """Mask logits (B, Q, h, w) as dot products with the pixel embedding."""
    return torch.einsum("bqc,bchw->bqhw", mask_embeddings, pixel_embedding)


def assemble_scores(
    class_logits: torch.Tensor, mask_logits: torch.Tensor, out_hw: tuple[int, int]
) -> torch.Tensor:
    """Per-pixel class scores (B, N-1, H, W) from query predictions.

    Scores are softmax probabilities of the real classes (no-object
    dropped after the softmax) weighted by mask sigmoids, summed over
    queries, combined at mask resolution, then bilinearly resized.
    """
    probs = class_logits.softmax(dim=-1)[..., :-1]
    scores = torch.einsum("bqc,bqhw->bchw", probs, mask_logits.sigmoid())
    return F.interpolate(scores, size=out_hw, mode="bilinear", align_corners=False)


def assemble_semantic(
    class_logits: torch.Tensor, mask_logits: torch.Tensor, out_hw: tuple[int, int]
) -> torch.Tensor:
    """Per-pixel class id (B, H, W); ties resolve to the lowest class."""
    return assemble_scores(class_logits, mask_logits, out_hw).argmax(dim=1)


class AuxHead(nn.Module):
    """Training-only dense classifier on the 1/4 pyramid level."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.embed_dim
        self.conv = nn.Conv2d(d, d, kernel_size=3, padding=1)
        self.act = nn.GELU()
        self.classify = nn.Conv2d(d, cfg.num_real_classes, kernel_size=1)

    def forward(self, f4: torch.Tensor) -> torch.Tensor:
        return self.classify(self.act(self.conv(f4)))
