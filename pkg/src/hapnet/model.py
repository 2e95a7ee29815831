"""Full network: hybrid encoder, pixel/query decoders, auxiliary head."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .config import ModelConfig, validate_config
from .decoder import AuxHead, PixelDecoder, TransformerDecoder, assemble_semantic, predict_masks
from .phfi import FusedPyramid, HybridEncoder


@dataclass
class ModelOutputs:
    class_logits: torch.Tensor  # (B, Q, N)
    mask_logits: torch.Tensor  # (B, Q, H/4, W/4)
    aux_logits: torch.Tensor | None  # (B, N-1, H/4, W/4) when the aux head ran
    pixel_embedding: torch.Tensor  # (B, C, H/4, W/4)


class HapNet(nn.Module):
    """RGB-thermal scene parser with mask-classification output."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        validate_config(cfg)
        self.cfg = cfg
        self.encoder = HybridEncoder(cfg)
        self.pixel_decoder = PixelDecoder(cfg)
        self.transformer_decoder = TransformerDecoder(cfg)
        self.aux_head = AuxHead(cfg)

    def forward(
        self, rgb: torch.Tensor, thermal: torch.Tensor, with_aux: bool | None = None
    ) -> ModelOutputs:
        if with_aux is None:
            with_aux = self.training
        pyramid = self.encoder(rgb, thermal)
        return self.decode(pyramid, with_aux=with_aux)

    def decode(self, pyramid: FusedPyramid, with_aux: bool = False) -> ModelOutputs:
        levels, pixel_embedding = self.pixel_decoder(pyramid)
        queries = self.transformer_decoder(levels)
        mask_logits = predict_masks(queries.mask_embeddings, pixel_embedding)
        aux_logits = self.aux_head(pyramid.f4) if with_aux else None
        return ModelOutputs(
            class_logits=queries.class_logits,
            mask_logits=mask_logits,
            aux_logits=aux_logits,
            pixel_embedding=pixel_embedding,
        )

    @staticmethod
    def semantic_map(outputs: ModelOutputs, out_hw: tuple[int, int]) -> torch.Tensor:
        return assemble_semantic(outputs.class_logits, outputs.mask_logits, out_hw)

    def lr_scale(self, param_name: str) -> float:
        """Layer-wise decay: deeper trunk stages get larger multipliers.

        Trunk stage s of 4 runs at decay^(4-s); the patch and positional
        embeddings sit below stage 1 at decay^4; everything else at 1.
        """
        decay = 0.9
        if param_name.startswith("encoder.trunk.patch_embed."):
            return decay ** 4
        if param_name.startswith("encoder.trunk.stages."):
            stage = int(param_name.split(".")[3])
            return decay ** (4 - (stage + 1))
        return 1.0

    def no_weight_decay(self, param_name: str, param: torch.Tensor) -> bool:
        if param.ndim <= 1:
            return True
        return param_name.endswith("pos_embed") or param_name.endswith("query_embed")

    def parameter_groups(self, base_lr: float, weight_decay: float) -> list[dict]:
        """AdamW groups keyed by (lr scale, decay flag)."""
        groups: dict[tuple[float, bool], dict] = {}
        for name, param in self.named_parameters():
            if not param.requires_grad:
                continue
            scale = self.lr_scale(name)
            no_decay = self.no_weight_decay(name, param)
            key = (scale, no_decay)
            if key not in groups:
                groups[key] = {
                    "params": [],
                    "lr": base_lr * scale,
                    "weight_decay": 0.0 if no_decay else weight_decay,
                }
            groups[key]["params"].append(param)
        return [groups[k] for k in sorted(groups)]
