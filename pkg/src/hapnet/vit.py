"""Plain ViT trunk split into four stages.

The trunk patch-embeds the routed input once and runs pre-norm transformer
blocks; fusion modules sit between stages (see ``phfi``). A checkpoint
hook loads named arrays into the trunk with hard shape checking.
"""

from collections.abc import Mapping

import torch
import torch.nn as nn

from .config import PATCH_SIZE, Modality, ModelConfig


class PatchEmbed(nn.Module):
    """16x16 non-overlapping patches, linear projection, learned positions."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.height % PATCH_SIZE or cfg.width % PATCH_SIZE:
            raise ValueError(f"input size {(cfg.height, cfg.width)} not divisible by patch size {PATCH_SIZE}")
        self.grid = (cfg.height // PATCH_SIZE, cfg.width // PATCH_SIZE)
        self.num_tokens = self.grid[0] * self.grid[1]
        self.proj = nn.Conv2d(3, cfg.embed_dim, kernel_size=PATCH_SIZE, stride=PATCH_SIZE)
        self.pos_embed = nn.Parameter(torch.zeros(1, self.num_tokens, cfg.embed_dim))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)

    def project(self, image: torch.Tensor) -> torch.Tensor:
        """Patch projection without positions: (B, 3, H, W) -> (B, T, D)."""
        if image.shape[-2] // PATCH_SIZE != self.grid[0] or image.shape[-1] // PATCH_SIZE != self.grid[1]:
            raise ValueError(f"image size {tuple(image.shape[-2:])} does not match patch grid {self.grid}")
        return self.proj(image).flatten(2).transpose(1, 2)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.project(image) + self.pos_embed


class SelfAttention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (B, h, N, hd)
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class TrunkBlock(nn.Module):
    """Pre-norm transformer block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.mlp(self.norm2(x))
        return x


class ViTTrunk(nn.Module):
    """Patch embedding plus four stages of transformer blocks."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        if cfg.embed_dim % cfg.trunk_heads:
            raise ValueError(f"embed_dim {cfg.embed_dim} not divisible by trunk_heads {cfg.trunk_heads}")
        self.patch_embed = PatchEmbed(cfg)
        self.stages = nn.ModuleList(
            [
                nn.ModuleList([TrunkBlock(cfg.embed_dim, cfg.trunk_heads) for _ in range(depth)])
                for depth in cfg.trunk_depth
            ]
        )

    def route_input(self, rgb: torch.Tensor, thermal: torch.Tensor, modality: Modality) -> torch.Tensor:
        """Token sequence for the trunk per the routing strategy.

        For RGB+T the two patch projections share one conv and are summed
        before the positional table is added once.
        """
        if modality is Modality.RGB:
            return self.patch_embed(rgb)
        if modality is Modality.THERMAL:
            return self.patch_embed(thermal)
        return self.patch_embed.project(rgb) + self.patch_embed.project(thermal) + self.patch_embed.pos_embed

    def run_stage(self, stage_index: int, x: torch.Tensor) -> torch.Tensor:
        """Apply stage ``stage_index`` (0-based) blocks sequentially."""
        if x.shape[1] != self.patch_embed.num_tokens:
            raise ValueError(f"token count {x.shape[1]} does not match grid {self.patch_embed.grid}")
        for block in self.stages[stage_index]:
            x = block(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """All four stages back to back (prior-free trunk run)."""
        for i in range(len(self.stages)):
            x = self.run_stage(i, x)
        return x

    def load_named_arrays(self, arrays: Mapping[str, torch.Tensor]) -> None:
        """Load pretrained trunk parameters by state-dict name.

        Unknown names and shape mismatches are hard errors; missing names
        keep their current (random) initialization.
        """
        state = self.state_dict()
        for name, value in arrays.items():
            if name not in state:
                raise KeyError(f"unknown trunk parameter {name!r}")
            value = torch.as_tensor(value)
            if tuple(value.shape) != tuple(state[name].shape):
                raise ValueError(
                    f"shape mismatch for {name!r}: checkpoint {tuple(value.shape)} vs model {tuple(state[name].shape)}"
                )
            state[name] = value.to(state[name].dtype)
        self.load_state_dict(state)
