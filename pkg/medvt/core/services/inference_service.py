"""Sliding-window clip inference.

Every frame gets its own window of T frames in which it sits at offset
ceil(T/2) - 1; indices past either end are clamped (edge replication).
The frame's logits are read at that offset, already upsampled to the input
size. Multiscale inference resizes the video per scale multiplier, averages
the logits in logit space at the original size and then takes the argmax.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import ConfigError, DimensionError
from medvt.core.model.backbone import STRIDE
from medvt.core.model.medvt import MedVT
from medvt.core.tensor import ops
from medvt.domain.interfaces.file_system import FileSystem
from medvt.domain.models.common import LabelMap, Tensor

logger = logging.getLogger(__name__)

PUBLISHED_SCALES = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2)
OUTPUT_FORMATS = ("pgm", "mvt1")


def centre_offset(num_frames: int) -> int:
    return math.ceil(num_frames / 2) - 1


def window_indices(length: int, num_frames: int, stride: int = 1) -> List[List[int]]:
    """For each target frame, the clamped indices of its window (temporal step `stride`)."""
    if length < 1:
        raise DimensionError("a video needs at least one frame", (length,))
    off = centre_offset(num_frames)
    return [[min(max(c + (j - off) * stride, 0), length - 1) for j in range(num_frames)] for c in range(length)]


def round_to_stride(size: float, multiple: int = STRIDE) -> int:
    """Nearest multiple of `multiple`, ties rounding up."""
    return int(math.floor(size / multiple + 0.5)) * multiple


def scaled_size(height: int, width: int, scale: float) -> Tuple[int, int]:
    h, w = round_to_stride(height * scale), round_to_stride(width * scale)
    if h < STRIDE or w < STRIDE:
        raise DimensionError(f"scale {scale} shrinks the input below {STRIDE} px", (height, width), (h, w))
    return h, w


@dataclass
class VideoPrediction:
    labels: LabelMap                  # (N, H, W)
    logits: Tensor                    # (N, H, W, C_cls)
    attention: Optional[Tensor] = None  # (N, H_1, W_1, N_h), window-centre F^A


class InferenceService:
    """Runs a trained model over whole videos."""

    def __init__(self, files: FileSystem, threads: Optional[int] = None):
        self.files = files
        self.threads = threads or None

    def _centre_logits(self, model: MedVT, params: ParamStore, video: Tensor, stride: int,
                       with_attention: bool) -> Tuple[Tensor, Optional[Tensor]]:
        windows = window_indices(video.shape[0], model.config.num_frames, stride)
        off = centre_offset(model.config.num_frames)

        def run(indices: List[int]):
            result = model.predict_logits(params, video[indices], with_attention=with_attention)
            if with_attention:
                logits, attention = result
                return logits[off], attention[off]
            return result[off], None

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            outputs = list(pool.map(run, windows))
        logits = np.stack([o[0] for o in outputs])
        attention = np.stack([o[1] for o in outputs]) if with_attention else None
        return logits, attention

    def infer_video(self, model: MedVT, params: ParamStore, video: Tensor, stride: int = 1,
                    with_attention: bool = False) -> VideoPrediction:
        """Per-frame argmax of the centre-frame logits of each frame's window."""
        video = np.asarray(video)
        logits, attention = self._centre_logits(model, params, video, stride, with_attention)
        logger.debug(f"Inferred {video.shape[0]} frames at {video.shape[1]}x{video.shape[2]}")
        return VideoPrediction(np.argmax(logits, axis=-1), logits, attention)

    def multiscale_infer(self, model: MedVT, params: ParamStore, video: Tensor, scales: Sequence[float],
                         stride: int = 1, with_attention: bool = False) -> VideoPrediction:
        """Mean of per-scale logits (resized back to the input size), then argmax.

        The attention dump, if requested, comes from the first scale.
        """
        if not scales:
            raise DimensionError("multiscale inference needs at least one scale")
        video = np.asarray(video)
        height, width = video.shape[1], video.shape[2]
        sizes = [scaled_size(height, width, s) for s in scales]
        total: Optional[Tensor] = None
        attention = None
        for i, (scale, (h, w)) in enumerate(zip(scales, sizes)):
            resized = ops.resize_bilinear(video, h, w)
            logits, att = self._centre_logits(model, params, resized, stride, with_attention and i == 0)
            if i == 0:
                attention = att
            logits = ops.resize_bilinear(logits, height, width)
            total = logits if total is None else total + logits
            logger.debug(f"Scale {scale}: inferred at {h}x{w}")
        mean = total / len(scales)
        return VideoPrediction(np.argmax(mean, axis=-1), mean, attention)

    def predict(self, model: MedVT, params: ParamStore, video: Tensor, scales: Optional[Sequence[float]] = None,
                stride: int = 1, with_attention: bool = False) -> VideoPrediction:
        if scales is None:
            return self.infer_video(model, params, video, stride, with_attention)
        return self.multiscale_infer(model, params, video, scales, stride, with_attention)

    def write_prediction(self, out_dir: str, clip_id: str, prediction: VideoPrediction, fmt: str = "pgm") -> List[Path]:
        """`<id>_<f>.pgm` masks or `<id>.mvt1` logits, plus `<id>_attention.mvt1` when present."""
        directory = Path(out_dir)
        if fmt == "pgm":
            paths = self.files.write_mask_frames(directory, clip_id, prediction.labels)
        elif fmt == "mvt1":
            paths = [self.files.write_tensor(directory / f"{clip_id}.mvt1", prediction.logits)]
        else:
            raise ConfigError(f"unknown output format '{fmt}', expected one of {OUTPUT_FORMATS}")
        if prediction.attention is not None:
            paths.append(self.files.write_tensor(directory / f"{clip_id}_attention.mvt1", prediction.attention))
        return paths
