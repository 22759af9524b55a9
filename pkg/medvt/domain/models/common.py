"""Defines common Value Objects used across different domain contexts.

These are simple named values (tensors, seeds, parameter names, boxes) that
keep signatures readable and consistent across the layers.
"""

from typing import NewType, Tuple, TypedDict

import numpy as np
import numpy.typing as npt

# === Tensor Context ===

# A dense, row-major, channels-last array of f32 or f64 values. Ops never mutate it.
Tensor = npt.NDArray[np.floating]
# Integer class-index maps (T, H, W); the value type of MaskClip.
LabelMap = npt.NDArray[np.integer]

Seed = NewType("Seed", int)
ParamName = NewType("ParamName", str)
ScaleIndex = NewType("ScaleIndex", int)  # 1 = finest ... s_max = coarsest

# === Evaluation Context ===

# Axis-aligned, inclusive pixel box (x0, y0, x1, y1).
Box = Tuple[int, int, int, int]

VERIFICATION_DTYPE = np.float64
FAST_DTYPE = np.float32


class LossRecord(TypedDict):
    """One row of the loss curve CSV."""
    iter: int
    stage: str
    loss: float


class ManifestEntry(TypedDict):
    """One clip of a synthetic dataset manifest."""
    id: str
    split: str
    category: str
    seed: int
    frames: int
    texture: str
    boxes: list
