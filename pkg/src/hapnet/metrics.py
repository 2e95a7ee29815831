"""Confusion-matrix bookkeeping and the derived per-class scores.

Rows index ground truth, columns index predictions, counts are int64.
Classes absent from both axes produce NaN scores and drop out of the
means via nanmean.
"""

import numpy as np

from .losses import IGNORE_INDEX


class ConfusionMatrix:
    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def accumulate(self, gt, pred, ignore_index: int = IGNORE_INDEX) -> None:
        gt = np.asarray(gt)
        pred = np.asarray(pred)
        if gt.shape != pred.shape:
            raise ValueError(f"shape mismatch: gt {gt.shape} vs pred {pred.shape}")
        gt = gt.reshape(-1).astype(np.int64)
        pred = pred.reshape(-1).astype(np.int64)
        keep = gt != ignore_index
        gt, pred = gt[keep], pred[keep]
        n = self.num_classes
        if gt.size == 0:
            return
        if gt.min() < 0 or gt.max() >= n:
            raise ValueError("ground-truth label out of range")
        if pred.min() < 0 or pred.max() >= n:
            raise ValueError("prediction out of range")
        self.counts += np.bincount(gt * n + pred, minlength=n * n).reshape(n, n)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge matrices of different sizes")
        self.counts += other.counts

    def per_class(self) -> tuple[np.ndarray, np.ndarray]:
        """(accuracy, iou) arrays; NaN where the denominator is zero."""
        diag = np.diag(self.counts).astype(np.float64)
        row = self.counts.sum(axis=1).astype(np.float64)
        col = self.counts.sum(axis=0).astype(np.float64)
        union = row + col - diag
        acc = np.where(row > 0, diag / np.where(row > 0, row, 1.0), np.nan)
        iou = np.where(union > 0, diag / np.where(union > 0, union, 1.0), np.nan)
        return acc, iou

    def reduce(self) -> tuple[float, float]:
        """(mAcc, mIoU) as NaN-ignoring means over classes."""
        acc, iou = self.per_class()
        macc = float(np.nanmean(acc)) if np.any(np.isfinite(acc)) else float("nan")
        miou = float(np.nanmean(iou)) if np.any(np.isfinite(iou)) else float("nan")
        return macc, miou

    def to_csv(self, class_names: list[str] | None = None) -> str:
        if class_names is not None and len(class_names) != self.num_classes:
            raise ValueError("class_names length must match num_classes")
        acc, iou = self.per_class()
        macc, miou = self.reduce()
        lines = ["class,acc,iou"]
        for c in range(self.num_classes):
            name = class_names[c] if class_names else str(c)
            lines.append(f"{name},{acc[c]:.6f},{iou[c]:.6f}")
        lines.append(f"mean,{macc:.6f},{miou:.6f}")
        return "\n".join(lines) + "\n"
