"""Focal and Dice losses over per-pixel class logits.

Targets are integer class maps with the logits' leading shape; both losses
flatten to (N, C) pixels x classes.
"""

import numpy as np

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Var
from medvt.core.exceptions import DimensionError
from medvt.domain.models.common import LabelMap
from medvt.domain.models.configs import LossConfig


def one_hot(targets: LabelMap, num_classes: int, dtype) -> np.ndarray:
    flat = np.asarray(targets).reshape(-1).astype(np.int64)
    if flat.size and (flat.min() < 0 or flat.max() >= num_classes):
        raise DimensionError(f"target class indices must lie in [0, {num_classes})")
    out = np.zeros((flat.size, num_classes), dtype=dtype)
    out[np.arange(flat.size), flat] = 1
    return out


def _flatten(logits: Var, targets: LabelMap) -> Var:
    targets = np.asarray(targets)
    if targets.size == 0:
        raise DimensionError("empty target")
    if logits.shape[:-1] != targets.shape:
        raise DimensionError("targets must match the logits without their class axis", logits.shape, targets.shape)
    return F.reshape(logits, (targets.size, logits.shape[-1]))


def focal_loss(logits: Var, targets: LabelMap, alpha: float = 0.25, gamma: float = 2.0) -> Var:
    """mean over pixels of -alpha (1 - p_t)^gamma log p_t."""
    flat = _flatten(logits, targets)
    onehot = one_hot(targets, flat.shape[1], flat.dtype)
    log_pt = F.sum_(F.mul(F.log_softmax(flat, axis=-1), onehot), axis=-1)
    per_pixel = log_pt
    if gamma != 0:
        weight = F.power(F.add_scalar(F.neg(F.exp(log_pt)), 1.0), gamma)
        per_pixel = F.mul(weight, log_pt)
    return F.scale(F.mean(per_pixel), -alpha)


def dice_loss(probs: Var, targets: LabelMap, eps: float = 1.0) -> Var:
    """1 - (2 sum(pq) + eps) / (sum(p) + sum(q) + eps), averaged over classes."""
    flat = _flatten(probs, targets)
    onehot = one_hot(targets, flat.shape[1], flat.dtype)
    intersection = F.sum_(F.mul(flat, onehot), axis=0)
    denominator = F.add_scalar(F.add(F.sum_(flat, axis=0), onehot.sum(axis=0)), eps)
    ratio = F.div(F.add_scalar(F.scale(intersection, 2.0), eps), denominator)
    return F.add_scalar(F.neg(F.mean(ratio)), 1.0)


def combined_loss(logits: Var, targets: LabelMap, cfg: LossConfig) -> Var:
    """lambda_focal * focal(logits) + lambda_dice * dice(softmax(logits))."""
    terms = []
    if cfg.lambda_focal:
        terms.append(F.scale(focal_loss(logits, targets, cfg.focal_alpha, cfg.focal_gamma), cfg.lambda_focal))
    if cfg.lambda_dice:
        terms.append(F.scale(dice_loss(F.softmax(logits, axis=-1), targets, cfg.dice_eps), cfg.lambda_dice))
    total = terms[0]
    for term in terms[1:]:
        total = F.add(total, term)
    return total
