"""Set-prediction training losses with Hungarian matching.

Ground truth is one binary mask per class present in the label map. Each
target is matched to a distinct query by minimizing a classification +
BCE + Dice cost; ties resolve to the assignment that is lexicographically
smallest in query index, walking targets in ascending class order.
"""

import itertools
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

logger = logging.getLogger(__name__)

IGNORE_INDEX = 255


@dataclass
class LossWeights:
    bce: float = 5.0
    dice: float = 5.0
    cls: float = 2.0
    ce: float = 0.4
    no_object: float = 0.1


def dice_loss(mask_probs: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Soft Dice over all elements, smoothed by ``eps`` in both terms."""
    inter = (mask_probs * target).sum()
    return 1.0 - (2.0 * inter + eps) / (mask_probs.sum() + target.sum() + eps)


def bce_mask_loss(mask_logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(mask_logits, target)


def match_cost(
    class_logits: torch.Tensor,
    mask_logits: torch.Tensor,
    gt_class: int,
    gt_mask: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Matching cost of one query against one target segment.

    The class term is the negated softmax probability (not its log), the
    mask terms reuse the training BCE and Dice.
    """
    prob = class_logits.softmax(-1)[gt_class]
    bce = bce_mask_loss(mask_logits, gt_mask)
    dice = dice_loss(mask_logits.sigmoid(), gt_mask)
    return weights.cls * (-prob) + weights.bce * bce + weights.dice * dice


def cost_matrix(
    class_logits: torch.Tensor,
    mask_logits: torch.Tensor,
    gt_classes: list[int],
    gt_masks: torch.Tensor,
    weights: LossWeights,
) -> np.ndarray:
    """(Q, G) float64 cost table, computed without tracking gradients."""
    q = class_logits.shape[0]
    with torch.no_grad():
        cls64 = class_logits.double()
        msk64 = mask_logits.double()
        gts64 = gt_masks.double()
        out = np.empty((q, len(gt_classes)), dtype=np.float64)
        for qi in range(q):
            for gi, cid in enumerate(gt_classes):
                out[qi, gi] = match_cost(cls64[qi], msk64[qi], cid, gts64[gi], weights).item()
    return out


def _min_assignment_cost(cost: np.ndarray) -> float:
    if cost.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Optimal injective target-to-query assignment.

    Returns ``query_for_target`` of length G. Among cost-optimal
    assignments, picks the lexicographically smallest query tuple. Each
    candidate fix is accepted when it still completes to the optimal
    total within a tiny relative tolerance.
    """
    cost = np.asarray(cost, dtype=np.float64)
    num_q, num_g = cost.shape
    if num_g > num_q:
        raise ValueError(f"cannot match {num_g} targets to {num_q} queries")
    if num_g == 0:
        return np.zeros(0, dtype=np.int64)
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-9 * (1.0 + abs(best))
    assign = np.empty(num_g, dtype=np.int64)
    avail = list(range(num_q))
    fixed = 0.0
    for tgt in range(num_g):
        rest_t = list(range(tgt + 1, num_g))
        for qi in avail:
            rest_q = [x for x in avail if x != qi]
            total = fixed + cost[qi, tgt] + _min_assignment_cost(cost[np.ix_(rest_q, rest_t)])
            if total <= best + tol:
                assign[tgt] = qi
                avail.remove(qi)
                fixed += float(cost[qi, tgt])
                break
        else:
            raise RuntimeError("no assignment completes to the optimal cost")
    return assign


def exhaustive_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Brute-force reference: enumerate every injective assignment.

    Returns the lexicographically smallest optimal query tuple and its
    total cost. Only usable for small Q.
    """
    cost = np.asarray(cost, dtype=np.float64)
    num_q, num_g = cost.shape
    best_total = None
    best_assign = None
    for perm in itertools.permutations(range(num_q), num_g):
        total = sum(cost[perm[g], g] for g in range(num_g))
        if best_total is None or total < best_total or (total == best_total and perm < best_assign):
            best_total = total
            best_assign = perm
    return np.asarray(best_assign, dtype=np.int64), float(best_total)


def segments_from_labels(
    labels: torch.Tensor, num_real_classes: int, ignore_index: int = IGNORE_INDEX
) -> tuple[list[int], torch.Tensor]:
    """One binary mask per class present, in ascending class order."""
    classes: list[int] = []
    masks: list[torch.Tensor] = []
    for v in torch.unique(labels).tolist():
        if v == ignore_index:
            continue
        if not 0 <= v < num_real_classes:
            raise ValueError(f"label {v} outside [0, {num_real_classes}) and not ignore")
        classes.append(v)
        masks.append((labels == v).float())
    if masks:
        return classes, torch.stack(masks)
    return classes, torch.zeros((0, *labels.shape), dtype=torch.float32, device=labels.device)


def cls_loss(
    class_logits: torch.Tensor,
    assignment: np.ndarray,
    gt_classes: list[int],
    weights: LossWeights,
) -> torch.Tensor:
    """Weighted cross-entropy over every query of one image.

    Unmatched queries are trained toward the trailing no-object class,
    which carries a reduced weight in the mean.
    """
    num_q, num_cls = class_logits.shape
    target = torch.full((num_q,), num_cls - 1, dtype=torch.long, device=class_logits.device)
    for gi, cid in enumerate(gt_classes):
        target[int(assignment[gi])] = cid
    weight = torch.ones(num_cls, dtype=class_logits.dtype, device=class_logits.device)
    weight[num_cls - 1] = weights.no_object
    return F.cross_entropy(class_logits, target, weight=weight)


def aux_ce_loss(
    aux_logits: torch.Tensor, labels: torch.Tensor, ignore_index: int = IGNORE_INDEX
) -> torch.Tensor:
    """Dense cross-entropy against downsampled labels; 0 if all ignored."""
    if not (labels != ignore_index).any():
        logger.warning("auxiliary loss has no valid pixels; contributing zero")
        return aux_logits.sum() * 0.0
    return F.cross_entropy(aux_logits, labels, ignore_index=ignore_index)


def total_loss(
    bce: torch.Tensor, dice: torch.Tensor, cls: torch.Tensor, ce: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    return weights.bce * bce + weights.dice * dice + weights.cls * cls + weights.ce * ce


def downsample_labels(labels: torch.Tensor, factor: int) -> torch.Tensor:
    """Nearest downsample of integer labels, sampling each block's center.

    The center convention keeps upsampled mask boundaries aligned with the
    full-resolution labels (the top-left rule would shift them by half a
    block).
    """
    off = factor // 2
    return labels[..., off::factor, off::factor]


def compute_losses(
    class_logits: torch.Tensor,
    mask_logits: torch.Tensor,
    aux_logits: torch.Tensor | None,
    labels: torch.Tensor,
    weights: LossWeights | None = None,
    ignore_index: int = IGNORE_INDEX,
) -> dict[str, torch.Tensor]:
    """Batch losses. ``labels`` is (B, H, W) at input resolution.

    Targets are built at mask resolution (nearest-downsampled labels).
    Mask BCE and Dice average over matched pairs per image, then over the
    batch; images without any segment contribute zero to the mask terms.
    """
    if weights is None:
        weights = LossWeights()
    finite = torch.isfinite(class_logits).all() and torch.isfinite(mask_logits).all()
    if aux_logits is not None:
        finite = finite & torch.isfinite(aux_logits).all()
    if not finite:
        # matching on a non-finite cost matrix is undefined; report the loss
        # as non-finite and let the caller decide how to abort
        nan = (class_logits.sum() + mask_logits.sum()) * torch.nan
        return {"bce": nan, "dice": nan, "cls": nan, "ce": nan, "total": nan}
    num_real = class_logits.shape[-1] - 1
    factor = labels.shape[-1] // mask_logits.shape[-1]
    small = downsample_labels(labels, factor)
    if small.shape[-2:] != mask_logits.shape[-2:]:
        raise ValueError(
            f"labels {tuple(labels.shape[-2:])} do not downsample to masks "
            f"{tuple(mask_logits.shape[-2:])}"
        )
    zero = mask_logits.sum() * 0.0
    bce_terms, dice_terms, cls_terms = [], [], []
    for i in range(class_logits.shape[0]):
        gt_classes, gt_masks = segments_from_labels(small[i], num_real, ignore_index)
        if gt_classes:
            cost = cost_matrix(class_logits[i], mask_logits[i], gt_classes, gt_masks, weights)
            assign = hungarian(cost)
            pair_bce = [
                bce_mask_loss(mask_logits[i, int(assign[g])], gt_masks[g])
                for g in range(len(gt_classes))
            ]
            pair_dice = [
                dice_loss(mask_logits[i, int(assign[g])].sigmoid(), gt_masks[g])
                for g in range(len(gt_classes))
            ]
            bce_terms.append(torch.stack(pair_bce).mean())
            dice_terms.append(torch.stack(pair_dice).mean())
        else:
            assign = np.zeros(0, dtype=np.int64)
            bce_terms.append(zero)
            dice_terms.append(zero)
        cls_terms.append(cls_loss(class_logits[i], assign, gt_classes, weights))
    bce = torch.stack(bce_terms).mean()
    dice = torch.stack(dice_terms).mean()
    cls = torch.stack(cls_terms).mean()
    if aux_logits is not None:
        ce = aux_ce_loss(aux_logits, small, ignore_index)
    else:
        ce = zero
    return {
        "bce": bce,
        "dice": dice,
        "cls": cls,
        "ce": ce,
        "total": total_loss(bce, dice, cls, ce, weights),
    }
