"""Cross-attention used by the fusion adapters and the query decoder.

Two interchangeable kinds: exact softmax attention over all keys, and
multi-scale deformable attention that samples a few offset points per
scale with bilinear interpolation. Sampling locations are normalized to
[0, 1] with pixel centers at (x + 0.5) / W, matching
``grid_sample(align_corners=False)``.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import AttentionKind


def multi_scale_deformable_sample(
    value: torch.Tensor,
    shapes: list[tuple[int, int]],
    locations: torch.Tensor,
    weights: torch.Tensor,
) -> torch.Tensor:
    """Weighted bilinear reads of per-scale value maps.

    value: (B, S, h, hd) with S = sum of h*w over shapes, scales flattened
    row-major in order. locations: (B, Nq, h, L, K, 2) normalized (x, y).
    weights: (B, Nq, h, L, K). Returns (B, Nq, h*hd).
    """
    b, _, heads, head_dim = value.shape
    _, nq, _, levels, points, _ = locations.shape
    value_list = value.split([hh * ww for hh, ww in shapes], dim=1)
    grids = 2 * locations - 1
    sampled = []
    for lvl, (hh, ww) in enumerate(shapes):
        # (B, h*w, h, hd) -> (B*h, hd, hh, ww)
        v = value_list[lvl].flatten(2).transpose(1, 2).reshape(b * heads, head_dim, hh, ww)
        # (B, Nq, h, K, 2) -> (B*h, Nq, K, 2)
        g = grids[:, :, :, lvl].transpose(1, 2).flatten(0, 1)
        sampled.append(
            F.grid_sample(v, g, mode="bilinear", padding_mode="zeros", align_corners=False)
        )  # (B*h, hd, Nq, K)
    w = weights.transpose(1, 2).reshape(b * heads, 1, nq, levels * points)
    out = (torch.stack(sampled, dim=-2).flatten(-2) * w).sum(-1)  # (B*h, hd, Nq)
    return out.view(b, heads * head_dim, nq).transpose(1, 2)


class CrossAttention(nn.Module):
    """Multi-head cross-attention with a kind switch.

    standard: softmax(q k^T / sqrt(head_dim)) v over every key.
    deformable: per query, K sampled points per scale per head; requires
    ``kv_shapes`` (per-scale grids covering the kv sequence) and
    ``ref_points`` (normalized query locations).
    """

    def __init__(
        self,
        dim: int,
        num_heads: int,
        kind: AttentionKind = AttentionKind.STANDARD,
        num_levels: int = 1,
        num_points: int = 4,
    ):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.kind = AttentionKind(kind)
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.num_levels = num_levels
        self.num_points = num_points
        if self.kind is AttentionKind.STANDARD:
            self.q_proj = nn.Linear(dim, dim)
            self.k_proj = nn.Linear(dim, dim)
            self.v_proj = nn.Linear(dim, dim)
        else:
            self.v_proj = nn.Linear(dim, dim)
            self.sampling_offsets = nn.Linear(dim, num_heads * num_levels * num_points * 2)
            self.attention_weights = nn.Linear(dim, num_heads * num_levels * num_points)
            self._init_deformable()
        self.out_proj = nn.Linear(dim, dim)

    def _init_deformable(self) -> None:
        # Offsets start at a fixed star of points (one direction per head,
        # magnitude growing with point index, in pixels of each scale);
        # weights start uniform (zero logits).
        nn.init.zeros_(self.sampling_offsets.weight)
        thetas = torch.arange(self.num_heads, dtype=torch.float32) * (2.0 * math.pi / self.num_heads)
        star = torch.stack([thetas.cos(), thetas.sin()], -1)
        star = (star / star.abs().max(-1, keepdim=True)[0]).view(self.num_heads, 1, 1, 2)
        star = star.repeat(1, self.num_levels, self.num_points, 1)
        for p in range(self.num_points):
            star[:, :, p, :] *= p + 1
        with torch.no_grad():
            self.sampling_offsets.bias.copy_(star.reshape(-1))
        nn.init.zeros_(self.attention_weights.weight)
        nn.init.zeros_(self.attention_weights.bias)

    def forward(
        self,
        queries: torch.Tensor,
        kv: torch.Tensor,
        kv_shapes: list[tuple[int, int]] | None = None,
        ref_points: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if self.kind is AttentionKind.STANDARD:
            return self._forward_standard(queries, kv)
        return self._forward_deformable(queries, kv, kv_shapes, ref_points)

    def _forward_standard(self, queries: torch.Tensor, kv: torch.Tensor) -> torch.Tensor:
        b, nq, d = queries.shape
        nk = kv.shape[1]
        q = self.q_proj(queries).reshape(b, nq, self.num_heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(kv).reshape(b, nk, self.num_heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(kv).reshape(b, nk, self.num_heads, self.head_dim).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) * self.head_dim ** -0.5
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, nq, d)
        return self.out_proj(out)

    def _forward_deformable(
        self,
        queries: torch.Tensor,
        kv: torch.Tensor,
        kv_shapes: list[tuple[int, int]] | None,
        ref_points: torch.Tensor | None,
    ) -> torch.Tensor:
        if kv_shapes is None or ref_points is None:
            raise ValueError("deformable attention requires kv_shapes and ref_points")
        if len(kv_shapes) != self.num_levels:
            raise ValueError(f"expected {self.num_levels} kv scales, got {len(kv_shapes)}")
        b, nq, d = queries.shape
        if sum(hh * ww for hh, ww in kv_shapes) != kv.shape[1]:
            raise ValueError("kv_shapes do not cover the kv sequence")
        value = self.v_proj(kv).reshape(b, kv.shape[1], self.num_heads, self.head_dim)
        offsets = self.sampling_offsets(queries).reshape(
            b, nq, self.num_heads, self.num_levels, self.num_points, 2
        )
        weights = self.attention_weights(queries).reshape(
            b, nq, self.num_heads, self.num_levels * self.num_points
        )
        weights = weights.softmax(-1).reshape(b, nq, self.num_heads, self.num_levels, self.num_points)
        if ref_points.dim() == 2:
            ref_points = ref_points.unsqueeze(0).expand(b, -1, -1)
        # Offsets are in pixels of each scale; normalize per level.
        normalizer = torch.as_tensor(
            [[ww, hh] for hh, ww in kv_shapes], dtype=queries.dtype, device=queries.device
        )
        locations = ref_points[:, :, None, None, None, :] + offsets / normalizer[None, None, None, :, None, :]
        out = multi_scale_deformable_sample(value, kv_shapes, locations, weights)
        return self.out_proj(out)


def grid_reference_points(shape: tuple[int, int], dtype=torch.float32, device=None) -> torch.Tensor:
    """Pixel-center reference points of a grid, row-major, normalized (x, y)."""
    hh, ww = shape
    ys = (torch.arange(hh, dtype=dtype, device=device) + 0.5) / hh
    xs = (torch.arange(ww, dtype=dtype, device=device) + 0.5) / ww
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy], dim=-1).reshape(hh * ww, 2)
