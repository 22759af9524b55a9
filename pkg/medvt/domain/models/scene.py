"""Synthetic scene description consumed by the clip generator."""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

from medvt.core.exceptions import SceneError
from medvt.domain.models.common import Box, LabelMap, Tensor

SHAPE_KINDS = ("disk", "rectangle", "blob")
TRAJECTORIES = ("linear", "sinusoidal")
TEXTURE_MODES = ("contrast", "camouflage")

GRID = 32


@dataclass(frozen=True)
class SceneSpec:
    """One moving object over a textured background.

    `start` is the object centre at frame 0 as (x, y); None places it at a
    seeded position that keeps the whole trajectory inside the frame.
    """
    seed: int
    num_frames: int = 6
    height: int = 64
    width: int = 64
    shape: str = "disk"
    size: float = 9.0
    trajectory: str = "linear"
    velocity: Tuple[float, float] = (2.0, 1.0)
    texture: str = "camouflage"
    distractors: int = 0
    start: Optional[Tuple[float, float]] = None

    def validate(self) -> "SceneSpec":
        if self.num_frames < 1:
            raise SceneError(f"a scene needs at least one frame, got {self.num_frames}")
        if self.height <= 0 or self.width <= 0 or self.height % GRID or self.width % GRID:
            raise SceneError(f"frame size must be a positive multiple of {GRID}, got {self.height}x{self.width}")
        if self.shape not in SHAPE_KINDS:
            raise SceneError(f"unknown shape '{self.shape}', expected one of {SHAPE_KINDS}")
        if self.trajectory not in TRAJECTORIES:
            raise SceneError(f"unknown trajectory '{self.trajectory}', expected one of {TRAJECTORIES}")
        if self.texture not in TEXTURE_MODES:
            raise SceneError(f"unknown texture mode '{self.texture}', expected one of {TEXTURE_MODES}")
        if self.size < 1:
            raise SceneError(f"object size must be >= 1 px, got {self.size}")
        if self.distractors < 0:
            raise SceneError("distractor count cannot be negative")
        return self


class SyntheticClip(NamedTuple):
    frames: Tensor            # (T, H, W, 3) in [0, 1]
    masks: LabelMap           # (T, H, W) class indices {0, 1}
    boxes: List[Box]          # tight mask box per frame


@dataclass
class DatasetSummary:
    root: str
    train: List[str] = field(default_factory=list)
    val: List[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return len(self.train) + len(self.val)
