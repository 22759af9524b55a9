"""Toy strided convnet standing in for a pretrained backbone.

Stage 1 is a 4x4 stride-4 patchify conv; stages 2-4 are 2x2 stride-2 convs.
Each conv is followed by group norm and relu, so the four outputs sit at
strides 4, 8, 16 and 32 of the input.
"""

import logging
from typing import Dict, Tuple

from medvt.core.autodiff import functional as F
from medvt.core.autodiff.graph import Graph, Var
from medvt.core.exceptions import DimensionError
from medvt.core.model import layers
from medvt.core.model.layers import ParamInit
from medvt.domain.models.configs import BackboneConfig, ModelConfig

logger = logging.getLogger(__name__)

STRIDE = 32
INPUT_SHIFT = -0.5
_KERNELS = (4, 2, 2, 2)


def required_size(height: int, width: int) -> Tuple[int, int]:
    """Smallest (H, W) at or above the given size that the stride contract accepts."""
    return -(-height // STRIDE) * STRIDE, -(-width // STRIDE) * STRIDE


def check_input_size(height: int, width: int) -> None:
    if height % STRIDE or width % STRIDE or height == 0 or width == 0:
        ph, pw = required_size(max(height, 1), max(width, 1))
        raise DimensionError(
            f"frame size {(height, width)} is not divisible by {STRIDE}; pad to {(ph, pw)} "
            f"(add {ph - height} rows and {pw - width} columns)"
        )


def init_backbone(init: ParamInit, cfg: BackboneConfig) -> None:
    channels = cfg.in_channels
    for stage, (k, width) in enumerate(zip(_KERNELS, cfg.widths), start=1):
        init.conv2d(f"backbone.stage{stage}.conv", k, k, channels, width)
        init.group_norm(f"backbone.stage{stage}.gn", width)
        channels = width


def toy_backbone(graph: Graph, clip: Var, cfg: ModelConfig) -> Dict[int, Var]:
    """FeaturePyramid {1: stride 4, 2: stride 8, 3: stride 16, 4: stride 32} of a (T, H, W, 3) clip.

    Raises:
        DimensionError: if H or W is not a multiple of 32 (the message names the padding needed).
    """
    if clip.ndim != 4 or clip.shape[3] != cfg.backbone.in_channels:
        raise DimensionError(f"clip must be (T, H, W, {cfg.backbone.in_channels})", clip.shape)
    check_input_size(clip.shape[1], clip.shape[2])
    x = F.add_scalar(clip, INPUT_SHIFT)
    pyramid: Dict[int, Var] = {}
    for stage, k in enumerate(_KERNELS, start=1):
        prefix = f"backbone.stage{stage}"
        x = layers.conv2d(graph, f"{prefix}.conv", x, stride=k, pad="same")
        x = F.relu(layers.group_norm(graph, f"{prefix}.gn", x, cfg.backbone.groups, cfg.norm_eps))
        pyramid[stage] = x
    logger.debug(f"Backbone pyramid shapes: {[v.shape for v in pyramid.values()]}")
    return pyramid
