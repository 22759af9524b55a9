"""Scores predicted masks against the synthetic groundtruth.

J and F statistics are computed per clip and then averaged over clips, the
way the video segmentation benchmarks report them. Box success rates pool
every frame of every clip.
"""

import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.evaluation.metrics import (
    boundary_f,
    f_statistics,
    iou,
    j_statistics,
    per_category_mean,
    success_rates,
)
from medvt.core.exceptions import MetricsError
from medvt.core.model.medvt import MedVT
from medvt.core.services.dataset_service import LoadedClip
from medvt.core.services.inference_service import InferenceService
from medvt.domain.interfaces.file_system import FileSystem
from medvt.domain.interfaces.user_interface import UserInterface
from medvt.domain.models.common import Box, LabelMap, ManifestEntry
from medvt.domain.models.reports import EvalReport, FStatistics, JStatistics

logger = logging.getLogger(__name__)


class ScoredClip(NamedTuple):
    entry: ManifestEntry
    predicted: LabelMap
    groundtruth: LabelMap


def _frame_boxes(entry: ManifestEntry, num_frames: int) -> Optional[List[Box]]:
    boxes = entry.get("boxes") or []
    if len(boxes) != num_frames:
        return None
    return [tuple(int(v) for v in box) for box in boxes]


class EvaluationService:
    """Builds EvalReports from predictions made here or read back from disk."""

    def __init__(self, ui: UserInterface, files: FileSystem, inference: InferenceService,
                 boundary_tolerance: int = 1):
        self.ui = ui
        self.files = files
        self.inference = inference
        self.boundary_tolerance = boundary_tolerance

    def evaluate(self, clips: Sequence[ScoredClip]) -> EvalReport:
        """Raises MetricsError for an empty clip list or a prediction shaped unlike its groundtruth."""
        if not clips:
            raise MetricsError("evaluation needs at least one clip")
        j_stats: List[JStatistics] = []
        f_stats: List[FStatistics] = []
        per_clip: Dict[str, float] = {}
        categories: Dict[str, Tuple[str, float]] = {}
        box_pairs = []
        with_boxes = True

        for clip in clips:
            predicted = np.asarray(clip.predicted)
            groundtruth = np.asarray(clip.groundtruth)
            if predicted.shape != groundtruth.shape:
                raise MetricsError(f"clip {clip.entry['id']}: prediction {predicted.shape} "
                                   f"does not match groundtruth {groundtruth.shape}")
            ious = [iou(p, g) for p, g in zip(predicted, groundtruth)]
            scores = [boundary_f(p, g, self.boundary_tolerance) for p, g in zip(predicted, groundtruth)]
            j = j_statistics(ious)
            j_stats.append(j)
            f_stats.append(f_statistics(scores))
            per_clip[clip.entry["id"]] = j.mean
            categories[clip.entry["id"]] = (clip.entry.get("category", "unknown"), j.mean)

            boxes = _frame_boxes(clip.entry, predicted.shape[0])
            if boxes is None:
                with_boxes = False
            else:
                box_pairs.extend(zip(predicted, boxes))
            logger.debug(f"Clip {clip.entry['id']}: J={j.mean:.4f}")

        table, category_mean = per_category_mean(categories)
        report = EvalReport(
            clips=len(clips),
            j=JStatistics(*(float(np.mean([getattr(s, k) for s in j_stats])) for k in ("mean", "recall", "decay"))),
            f=FStatistics(*(float(np.mean([getattr(s, k) for s in f_stats])) for k in ("mean", "recall", "decay"))),
            categories=table,
            category_mean=category_mean,
            moca=success_rates(box_pairs) if with_boxes else None,
            per_clip=per_clip,
        )
        if not with_boxes:
            logger.warning("Some clips carry no per-frame boxes; skipping box success rates")
        logger.info(f"Evaluated {report.clips} clips: J={report.j.mean:.4f} F={report.f.mean:.4f}")
        return report

    def evaluate_model(self, model: MedVT, params: ParamStore, clips: Sequence[LoadedClip],
                       scales: Optional[Sequence[float]] = None, stride: int = 1) -> EvalReport:
        scored = []
        for clip in clips:
            prediction = self.inference.predict(model, params, clip.frames, scales, stride)
            scored.append(ScoredClip(clip.entry, prediction.labels, clip.masks))
            self.ui.display_progress(f"Predicted clip {clip.entry['id']}")
        return self.evaluate(scored)

    def evaluate_directory(self, pred_dir: Union[str, Path], clips: Sequence[LoadedClip]) -> EvalReport:
        """Reads `<id>_<f>.pgm` predictions written by `infer`."""
        scored = [
            ScoredClip(clip.entry, self.files.read_mask_frames(pred_dir, clip.entry["id"], clip.masks.shape[0]),
                       clip.masks)
            for clip in clips
        ]
        logger.debug(f"Read predictions for {len(scored)} clips from {pred_dir}")
        return self.evaluate(scored)
