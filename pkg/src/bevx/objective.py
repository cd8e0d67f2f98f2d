"""Focal loss, the multi-scale training objective, and IoU."""

from dataclasses import dataclass

import numpy as np

from bevx import tensor as T

DEFAULT_LAMBDAS = (1.0, 2.0, 2.0, 60.0)


@dataclass(frozen=True)
class LossWeights:
    lambdas: tuple = DEFAULT_LAMBDAS  # B_0, B_1, B_2 branches, then final M
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        if len(lam) != 4:
            raise ValueError(f"need four scale weights, got {len(lam)}")
        if min(lam) < 0 or max(lam) <= 0:
            raise ValueError(f"scale weights must be non-negative with one positive: {lam}")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be non-negative")
        if not 0.0 <= self.focal_alpha <= 1.0:
            raise ValueError("focal_alpha must lie in [0, 1]")
        object.__setattr__(self, "lambdas", lam)


def focal_loss(logits, target, gamma=2.0, alpha=0.25):
    """Mean sigmoid focal loss over all cells.

    ``-alpha_t * (1 - p_t)**gamma * log(p_t)``, with p_t the probability of
    the true class and alpha_t = alpha on positives, 1 - alpha on negatives.
    """
    logits = T.constant(logits)
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.shape != logits.shape:
        raise T.ShapeError(f"focal_loss: logits {list(logits.shape)} vs target {list(tgt.shape)}")
    if not np.all((tgt == 0) | (tgt == 1)):
        raise ValueError("focal_loss: target must be binary {0, 1}")
    sign = 2.0 * tgt - 1.0
    signed = T.mul(logits, sign)  # log p_t = log_sigmoid(signed)
    log_pt = T.log_sigmoid(signed)
    alpha_t = np.where(tgt == 1, alpha, 1.0 - alpha)
    if gamma == 0:
        per_cell = T.mul(log_pt, -alpha_t)
    else:
        one_minus = T.sigmoid(T.mul(signed, -1.0))
        per_cell = T.mul(T.mul(T.pow(one_minus, gamma), log_pt), -alpha_t)
    return T.mean(per_cell)


def total_loss(out, target, aux_logits, weights=None):
    """Weighted sum of the three auxiliary-branch losses and the final loss.

    ``out.logits``, ``aux_logits[i]`` and ``target`` share the shape
    [batch, H_M, W_M, C_M]. Returns (total, [branch_0, branch_1, branch_2, final]).
    """
    weights = weights or LossWeights()
    if len(aux_logits) != 3:
        raise ValueError(f"total_loss needs three intermediate branches, got {len(aux_logits)}")
    g, a = weights.focal_gamma, weights.focal_alpha
    parts = [focal_loss(x, target, g, a) for x in aux_logits]
    parts.append(focal_loss(out.logits if hasattr(out, "logits") else out, target, g, a))
    total = None
    for lam, part in zip(weights.lambdas, parts):
        if lam == 0:
            continue
        term = T.mul(part, lam)
        total = term if total is None else T.add(total, term)
    return total, parts


def iou(pred_logits, target, threshold=0.5):
    """Intersection over union of ``sigmoid(logits) > threshold`` with the mask.

    An empty union counts as a perfect match (1.0).
    """
    x = np.asarray(pred_logits.data if isinstance(pred_logits, T.Tensor) else pred_logits)
    tgt = np.asarray(target) > 0.5
    if x.shape != tgt.shape:
        raise T.ShapeError(f"iou: prediction {list(x.shape)} vs target {list(tgt.shape)}")
    # sigmoid(x) > t  <=>  x > logit(t)
    if threshold <= 0:
        pred = np.ones_like(tgt)
    elif threshold >= 1:
        pred = np.zeros_like(tgt)
    else:
        pred = x > np.log(threshold / (1.0 - threshold))
    union = np.count_nonzero(pred | tgt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & tgt) / union


def iou_per_class(pred_logits, target, threshold=0.5):
    """IoU for each trailing channel of [..., C] arrays."""
    x = np.asarray(pred_logits.data if isinstance(pred_logits, T.Tensor) else pred_logits)
    tgt = np.asarray(target)
    return [iou(x[..., c], tgt[..., c], threshold) for c in range(x.shape[-1])]
