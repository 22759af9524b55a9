"""Segmentation metrics: region similarity J, boundary F-measure, box success rate.

Conventions follow the DAVIS evaluation tooling: an empty prediction of an
empty mask scores IoU 1, recall counts IoU > 0.5, and decay compares the
first and last quarters of a video.
"""

import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from medvt.core.exceptions import MetricsError
from medvt.domain.models.common import Box
from medvt.domain.models.reports import FStatistics, JStatistics, MocaResult

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)
RECALL_THRESHOLD = 0.5
DECAY_BINS = 4

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
_EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)


def _binary_pair(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise MetricsError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred > 0, gt > 0


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """|pred & gt| / |pred | gt|; two empty masks give 1."""
    pred, gt = _binary_pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def _statistics(values: Sequence[float]) -> Tuple[float, float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise MetricsError("statistics need at least one frame")
    mean = float(values.mean())
    recall = float(np.mean(values > RECALL_THRESHOLD))
    if values.size < DECAY_BINS:
        logger.debug(f"{values.size} frames are too few for {DECAY_BINS} decay bins; decay reported as 0")
        return mean, recall, 0.0
    bins = np.array_split(values, DECAY_BINS)
    decay = max(0.0, float(bins[0].mean() - bins[-1].mean()))
    return mean, recall, decay


def j_statistics(ious: Sequence[float]) -> JStatistics:
    """Mean, recall (fraction of frames with IoU > 0.5) and decay (first minus last quarter, >= 0).

    Clips shorter than four frames have no quarters; their decay is 0.
    """
    return JStatistics(*_statistics(ious))


def f_statistics(scores: Sequence[float]) -> FStatistics:
    return FStatistics(*_statistics(scores))


def boundary(mask: np.ndarray) -> np.ndarray:
    """Pixels of the mask with a 4-neighbour outside it; the image border counts as outside."""
    mask = np.asarray(mask) > 0
    return mask & ~ndimage.binary_erosion(mask, structure=_FOUR_CONNECTED, border_value=0)


def disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def boundary_f(pred: np.ndarray, gt: np.ndarray, tolerance_px: int = 1) -> float:
    """F-measure of boundary pixels matched within a disk of radius tolerance_px."""
    pred, gt = _binary_pair(pred, gt)
    pred_b, gt_b = boundary(pred), boundary(gt)
    n_pred, n_gt = np.count_nonzero(pred_b), np.count_nonzero(gt_b)
    if n_pred == 0 and n_gt == 0:
        return 1.0
    if n_pred == 0 or n_gt == 0:
        return 0.0
    if tolerance_px > 0:
        footprint = disk(tolerance_px)
        gt_zone = ndimage.binary_dilation(gt_b, structure=footprint)
        pred_zone = ndimage.binary_dilation(pred_b, structure=footprint)
    else:
        gt_zone, pred_zone = gt_b, pred_b
    precision = np.count_nonzero(pred_b & gt_zone) / n_pred
    recall = np.count_nonzero(gt_b & pred_zone) / n_gt
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


# === Box success rate ===

def largest_component_box(pred: np.ndarray) -> Optional[Box]:
    """Inclusive (x0, y0, x1, y1) of the largest 8-connected component, or None if empty."""
    labels, count = ndimage.label(np.asarray(pred) > 0, structure=_EIGHT_CONNECTED)
    if count == 0:
        return None
    areas = np.bincount(labels.ravel())[1:]
    ys, xs = np.nonzero(labels == int(np.argmax(areas)) + 1)
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def box_iou(a: Box, b: Box) -> float:
    """IoU of inclusive pixel boxes."""
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(0, ix1 - ix0 + 1) * max(0, iy1 - iy0 + 1)
    area_a = (a[2] - a[0] + 1) * (a[3] - a[1] + 1)
    area_b = (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def moca_success(pred: np.ndarray, gt_box: Box, thresholds: Sequence[float] = SUCCESS_THRESHOLDS) -> Dict[float, bool]:
    """Hit per threshold iff box IoU of the largest predicted component > threshold."""
    box = largest_component_box(pred)
    score = box_iou(box, gt_box) if box is not None else 0.0
    return {tau: score > tau for tau in thresholds}


def success_rates(pairs: Iterable[Tuple[np.ndarray, Box]],
                  thresholds: Sequence[float] = SUCCESS_THRESHOLDS) -> MocaResult:
    hits = {tau: 0 for tau in thresholds}
    total = 0
    for pred, gt_box in pairs:
        for tau, hit in moca_success(pred, gt_box, thresholds).items():
            hits[tau] += int(hit)
        total += 1
    if total == 0:
        raise MetricsError("success rate needs at least one frame")
    rates = {f"{tau:.1f}": hits[tau] / total for tau in thresholds}
    return MocaResult(success_rates=rates, sr_mean=float(np.mean(list(rates.values()))))


# === Per-category table ===

def per_category_mean(videos: Mapping[str, Tuple[str, float]]) -> Tuple[Dict[str, float], float]:
    """Unweighted mean mIoU within each category, and the mean of the category means."""
    if not videos:
        raise MetricsError("per-category mean needs at least one video")
    grouped: Dict[str, List[float]] = {}
    for category, score in videos.values():
        grouped.setdefault(category, []).append(score)
    table = {category: float(np.mean(scores)) for category, scores in sorted(grouped.items())}
    return table, float(np.mean(list(table.values())))
