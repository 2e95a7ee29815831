"""Inference over a dataset split, confusion accumulation, overlays."""

import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .data import collate
from .metrics import ConfusionMatrix
from .model import HapNet

logger = logging.getLogger(__name__)

# Visualization colors, class 0 fixed to black.
OVERLAY_COLORS = np.array(
    [
        [0, 0, 0],
        [220, 60, 60],
        [60, 200, 75],
        [65, 105, 225],
        [235, 220, 60],
        [220, 60, 220],
        [60, 220, 220],
        [245, 150, 50],
        [150, 90, 40],
        [130, 130, 220],
        [90, 180, 120],
        [200, 120, 160],
    ],
    dtype=np.uint8,
)


def colorize(labels: np.ndarray) -> np.ndarray:
    table = OVERLAY_COLORS
    idx = np.clip(labels, 0, len(table) - 1)
    return table[idx]


def evaluate_model(
    model: HapNet,
    dataset,
    batch_size: int = 2,
    overlay_dir=None,
) -> ConfusionMatrix:
    """Accumulate a confusion matrix over every sample of ``dataset``."""
    model.eval()
    cm = ConfusionMatrix(model.cfg.num_real_classes)
    if overlay_dir is not None:
        overlay_dir = Path(overlay_dir)
        overlay_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        for lo in range(0, len(dataset), batch_size):
            samples = [dataset[i] for i in range(lo, min(lo + batch_size, len(dataset)))]
            rgb, thermal, labels = collate(samples)
            outputs = model(rgb, thermal, with_aux=False)
            sem = model.semantic_map(outputs, labels.shape[-2:])
            cm.accumulate(labels.numpy(), sem.numpy())
            if overlay_dir is not None:
                for s, pred in zip(samples, sem):
                    _write_overlay(overlay_dir, s, pred.numpy())
    return cm


def _write_overlay(out_dir: Path, sample, pred: np.ndarray) -> None:
    color = colorize(pred)
    Image.fromarray(color).save(out_dir / f"{sample.sample_id}_pred.png")
    base = (sample.rgb.permute(1, 2, 0).numpy() * 255.0).astype(np.uint8)
    blend = (0.5 * base + 0.5 * color).round().astype(np.uint8)
    Image.fromarray(blend).save(out_dir / f"{sample.sample_id}_overlay.png")


def write_report(cm: ConfusionMatrix, class_names, out_dir) -> tuple[float, float]:
    """Write metrics.csv, log the summary, return (mAcc, mIoU)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if class_names is not None and len(class_names) < cm.num_classes:
        # The model may carry more class slots than the dataset names.
        class_names = list(class_names) + [
            f"class{i}" for i in range(len(class_names), cm.num_classes)
        ]
    csv = cm.to_csv(class_names)
    (out / "metrics.csv").write_text(csv)
    macc, miou = cm.reduce()
    logger.info("mAcc %.4f mIoU %.4f", macc, miou)
    return macc, miou
