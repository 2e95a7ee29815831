"""Cross-modal spatial prior descriptor.

Two weight-sharing convolutional branches turn each modality into a
stride-8/16/32 feature pyramid; the pyramids are fused by element-wise
summation, projected to the shared embedding width and flattened into the
spatial-prior token sequence.
"""

import torch
import torch.nn as nn

from .config import Modality, ModelConfig, TokenLayout


class LayerNorm2d(nn.Module):
    """Channel-wise layer norm for (B, C, H, W) tensors."""

    def __init__(self, num_channels: int, eps: float = 1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(num_channels))
        self.bias = nn.Parameter(torch.zeros(num_channels))
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(1, keepdim=True)
        var = (x - mean).pow(2).mean(1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return self.weight[:, None, None] * x + self.bias[:, None, None]


class ConvBlock(nn.Module):
    """Modern convolutional block: depthwise 7x7, norm, pointwise
    expand/project with GELU, residual."""

    def __init__(self, dim: int, mlp_ratio: int = 4):
        super().__init__()
        self.dwconv = nn.Conv2d(dim, dim, kernel_size=7, padding=3, groups=dim)
        self.norm = LayerNorm2d(dim)
        self.pwconv1 = nn.Conv2d(dim, mlp_ratio * dim, kernel_size=1)
        self.act = nn.GELU()
        self.pwconv2 = nn.Conv2d(mlp_ratio * dim, dim, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        shortcut = x
        x = self.dwconv(x)
        x = self.norm(x)
        x = self.pwconv1(x)
        x = self.act(x)
        x = self.pwconv2(x)
        return shortcut + x


class SpatialPriorDescriptor(nn.Module):
    """One shared branch plus the fusion/projection head.

    ``extract_pyramid`` is called once per modality with the same
    parameters (weight sharing is structural: there is a single branch).
    Stem reduces by 4, one extra downsample puts the first kept scale at
    stride 8; two further downsamples give strides 16 and 32.
    """

    def __init__(self, cfg: ModelConfig, block_factory=ConvBlock):
        super().__init__()
        c2, c3, c4 = cfg.cspd_channels
        d2, d3, d4 = cfg.cspd_depths
        self.stem = nn.Sequential(
            nn.Conv2d(3, c2, kernel_size=4, stride=4),
            LayerNorm2d(c2),
        )
        self.downsamples = nn.ModuleList(
            [
                nn.Sequential(LayerNorm2d(c2), nn.Conv2d(c2, c2, kernel_size=2, stride=2)),
                nn.Sequential(LayerNorm2d(c2), nn.Conv2d(c2, c3, kernel_size=2, stride=2)),
                nn.Sequential(LayerNorm2d(c3), nn.Conv2d(c3, c4, kernel_size=2, stride=2)),
            ]
        )
        self.stages = nn.ModuleList(
            [
                nn.Sequential(*[block_factory(c2) for _ in range(d2)]),
                nn.Sequential(*[block_factory(c3) for _ in range(d3)]),
                nn.Sequential(*[block_factory(c4) for _ in range(d4)]),
            ]
        )
        self.projections = nn.ModuleList(
            [nn.Conv2d(c, cfg.embed_dim, kernel_size=1) for c in (c2, c3, c4)]
        )
        self.expected_hw = (cfg.height, cfg.width)

    def extract_pyramid(self, image: torch.Tensor) -> list[torch.Tensor]:
        """(B, 3, H, W) -> three maps at strides 8/16/32."""
        if image.shape[-2:] != torch.Size(self.expected_hw):
            raise ValueError(
                f"input spatial size {tuple(image.shape[-2:])} does not match config {self.expected_hw}"
            )
        x = self.stem(image)
        maps = []
        for down, stage in zip(self.downsamples, self.stages):
            x = stage(down(x))
            maps.append(x)
        return maps

    def project_and_flatten(self, fused: list[torch.Tensor], layout: TokenLayout) -> torch.Tensor:
        """Project each level to embed_dim and concatenate row-major tokens.

        Output: (B, prior_total, D), scales ordered 1/8, 1/16, 1/32.
        """
        if len(fused) != 3:
            raise ValueError(f"expected 3 pyramid levels, got {len(fused)}")
        tokens = []
        for level, proj, shape in zip(fused, self.projections, layout.prior_shapes):
            if level.shape[-2:] != torch.Size(shape):
                raise ValueError(f"level shape {tuple(level.shape[-2:])} does not match layout {shape}")
            p = proj(level)  # (B, D, h, w)
            tokens.append(p.flatten(2).transpose(1, 2))  # (B, h*w, D)
        out = torch.cat(tokens, dim=1)
        assert out.shape[1] == layout.prior_total
        return out

    def build_prior(
        self,
        rgb: torch.Tensor,
        thermal: torch.Tensor,
        routing_cspd: Modality,
        layout: TokenLayout,
    ) -> torch.Tensor:
        """Route modalities through the shared branch and fuse by summation."""
        if routing_cspd is Modality.RGBT:
            pyr_rgb = self.extract_pyramid(rgb)
            pyr_th = self.extract_pyramid(thermal)
            fused = fuse_pyramids(pyr_rgb, pyr_th)
        elif routing_cspd is Modality.RGB:
            fused = self.extract_pyramid(rgb)
        else:
            fused = self.extract_pyramid(thermal)
        return self.project_and_flatten(fused, layout)


def fuse_pyramids(a: list[torch.Tensor], b: list[torch.Tensor]) -> list[torch.Tensor]:
    """Element-wise sum, level by level."""
    if len(a) != len(b):
        raise ValueError(f"pyramid level counts differ: {len(a)} vs {len(b)}")
    out = []
    for i, (x, y) in enumerate(zip(a, b)):
        if x.shape != y.shape:
            raise ValueError(f"level {i} shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
        out.append(x + y)
    return out
