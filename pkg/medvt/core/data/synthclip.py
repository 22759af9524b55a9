"""Deterministic synthetic clips with dense groundtruth.

A single rigid object moves over a static background. In contrast mode the
object is brighter than the background; in camouflage mode both are drawn
from the same two-level texture, so motion is the only cue. The object
carries its texture along (it is sampled in object-local coordinates).
"""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from medvt.core.exceptions import SceneError
from medvt.core.tensor import ops
from medvt.core.tensor.rng import Rng, derive_seed, make_rng
from medvt.domain.interfaces.dataset_store import DatasetStore
from medvt.domain.models.common import Box, ManifestEntry
from medvt.domain.models.scene import (
    SHAPE_KINDS,
    TRAJECTORIES,
    SceneSpec,
    SyntheticClip,
)

logger = logging.getLogger(__name__)

CAMOUFLAGE_LEVELS = (0.3, 0.7)
NOISE_CELL = 8
BLOB_LOBES = 3
BLOB_DEPTH = 0.25


# === Textures ===

def value_noise(rng: Rng, height: int, width: int, cell: int = NOISE_CELL) -> np.ndarray:
    """Smooth noise in [0, 1]: a coarse uniform grid upsampled bilinearly."""
    coarse = rng.random((1, height // cell + 2, width // cell + 2, 1))
    return ops.resize_bilinear(coarse, height, width)[0, :, :, 0]


def balanced_levels(rng: Rng, count: int) -> np.ndarray:
    """`count` values, half low and half high in random order (odd counts toss a coin for the spare)."""
    low, high = CAMOUFLAGE_LEVELS
    n_high = count // 2 + (int(rng.integers(0, 2)) if count % 2 else 0)
    values = np.full(count, low)
    values[:n_high] = high
    return rng.permutation(values)


def balanced_texture(rng: Rng, height: int, width: int, footprint: Optional[np.ndarray] = None) -> np.ndarray:
    """Two-level texture with the levels exactly balanced over `footprint` (default: every pixel).

    Pixels are exchangeable, with no lattice or pairing. Pixels outside the
    footprint are left at zero.
    """
    mask = np.ones((height, width), dtype=bool) if footprint is None else np.asarray(footprint, dtype=bool)
    if mask.shape != (height, width):
        raise SceneError(f"texture footprint {mask.shape} does not match {(height, width)}")
    field = np.zeros((height, width))
    field[mask] = balanced_levels(rng, int(mask.sum()))
    return field


def _to_rgb(grey: np.ndarray, tint: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> np.ndarray:
    return np.stack([grey * c for c in tint], axis=-1)


# === Geometry ===

def _extent(spec: SceneSpec) -> int:
    if spec.shape == "blob":
        return int(math.ceil(spec.size * (1.0 + BLOB_DEPTH)))
    return int(math.ceil(spec.size))


def shape_template(spec: SceneSpec, rng: Rng) -> np.ndarray:
    """Boolean footprint on the local grid [-E, E]^2 around the object centre."""
    e = _extent(spec)
    dy, dx = np.mgrid[-e:e + 1, -e:e + 1].astype(np.float64)
    r = spec.size
    if spec.shape == "disk":
        return dy * dy + dx * dx <= r * r
    if spec.shape == "rectangle":
        return (np.abs(dx) <= r) & (np.abs(dy) <= 0.6 * r)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    radius = r * (1.0 + BLOB_DEPTH * np.sin(BLOB_LOBES * np.arctan2(dy, dx) + phase))
    return np.hypot(dy, dx) <= radius


def displacements(spec: SceneSpec) -> np.ndarray:
    """(T, 2) float offsets (x, y) of the centre relative to frame 0."""
    t = np.arange(spec.num_frames, dtype=np.float64)
    vx, vy = spec.velocity
    if spec.trajectory == "linear":
        return np.stack([vx * t, vy * t], axis=1)
    period = float(max(spec.num_frames, 2))
    amplitude = vy * period / (2.0 * math.pi)
    return np.stack([vx * t, amplitude * np.sin(2.0 * math.pi * t / period)], axis=1)


def _start_range(offsets: np.ndarray, extent: int, size: int) -> Tuple[float, float]:
    return extent - offsets.min(), size - 1 - extent - offsets.max()


def place(spec: SceneSpec, rng: Rng) -> np.ndarray:
    """Integer centres (T, 2) as (x, y); raises SceneError if the object cannot stay inside."""
    e = _extent(spec)
    offsets = displacements(spec)
    x_lo, x_hi = _start_range(offsets[:, 0], e, spec.width)
    y_lo, y_hi = _start_range(offsets[:, 1], e, spec.height)
    if spec.start is None:
        if x_lo > x_hi or y_lo > y_hi:
            raise SceneError(
                f"a {spec.shape} of extent {e}px moving {spec.velocity}px/frame cannot stay "
                f"inside a {spec.width}x{spec.height} frame for {spec.num_frames} frames"
            )
        start = np.array([rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi)])
    else:
        start = np.asarray(spec.start, dtype=np.float64)
    centres = np.rint(start[None, :] + offsets).astype(np.int64)
    for t, (cx, cy) in enumerate(centres):
        if not (e <= cx <= spec.width - 1 - e and e <= cy <= spec.height - 1 - e):
            raise SceneError(f"object leaves the frame at frame {t} (centre {(int(cx), int(cy))}, extent {e}px)")
    return centres


def mask_box(mask: np.ndarray) -> Box:
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def _paint(canvas: np.ndarray, template: np.ndarray, texture: np.ndarray, cx: int, cy: int) -> None:
    e = template.shape[0] // 2
    region = canvas[cy - e:cy + e + 1, cx - e:cx + e + 1]
    region[template] = texture[template]


# === Generation ===

def generate(spec: SceneSpec) -> SyntheticClip:
    """Renders the scene; a pure function of spec."""
    spec.validate()
    rng = make_rng(derive_seed(spec.seed, "scene"))
    template = shape_template(spec, rng)
    centres = place(spec, rng)
    e = template.shape[0] // 2
    local = 2 * e + 1

    if spec.texture == "camouflage":
        background = _to_rgb(balanced_texture(rng, spec.height, spec.width))
        foreground = _to_rgb(balanced_texture(rng, local, local, template))
    else:
        background = _to_rgb(0.15 + 0.3 * value_noise(rng, spec.height, spec.width), (0.9, 1.0, 1.0))
        foreground = _to_rgb(0.6 + 0.3 * value_noise(rng, local, local), (1.0, 0.85, 0.7))

    # Distractors are static and never part of the groundtruth.
    scene = background.copy()
    for _ in range(spec.distractors):
        d_spec = SceneSpec(seed=spec.seed, shape="disk", size=max(1.0, 0.6 * spec.size),
                           height=spec.height, width=spec.width)
        d_template = shape_template(d_spec, rng)
        d_e = d_template.shape[0] // 2
        if spec.width <= 2 * d_e or spec.height <= 2 * d_e:
            break
        cx = int(rng.integers(d_e, spec.width - d_e))
        cy = int(rng.integers(d_e, spec.height - d_e))
        if spec.texture == "camouflage":
            d_texture = _to_rgb(balanced_texture(rng, 2 * d_e + 1, 2 * d_e + 1, d_template))
        else:
            d_texture = _to_rgb(0.6 + 0.3 * value_noise(rng, 2 * d_e + 1, 2 * d_e + 1), (1.0, 0.85, 0.7))
        _paint(scene, d_template, d_texture, cx, cy)

    frames = np.empty((spec.num_frames, spec.height, spec.width, 3))
    masks = np.zeros((spec.num_frames, spec.height, spec.width), dtype=np.int64)
    boxes: List[Box] = []
    for t, (cx, cy) in enumerate(centres):
        frame = scene.copy()
        _paint(frame, template, foreground, int(cx), int(cy))
        frames[t] = frame
        masks[t, cy - e:cy + e + 1, cx - e:cx + e + 1][template] = 1
        boxes.append(mask_box(masks[t]))
    return SyntheticClip(np.clip(frames, 0.0, 1.0), masks, boxes)


def sample_scene(seed: int, texture: str = "camouflage", num_frames: int = 6,
                 height: int = 64, width: int = 64) -> SceneSpec:
    """Draws a random scene whose trajectory is guaranteed to stay inside the frame."""
    rng = make_rng(derive_seed(seed, "layout"))
    shape = SHAPE_KINDS[int(rng.integers(len(SHAPE_KINDS)))]
    trajectory = TRAJECTORIES[int(rng.integers(len(TRAJECTORIES)))]
    size = float(rng.uniform(0.12, 0.18) * min(height, width))
    extent = int(math.ceil(size * (1.0 + BLOB_DEPTH)))
    steps = max(num_frames - 1, 1)
    vx_max = max(0, (width - 2 * extent - 2) // steps)
    vy_max = max(0, (height - 2 * extent - 2) // steps)
    vx = int(rng.integers(1, min(3, vx_max) + 1)) * int(rng.choice([-1, 1])) if vx_max >= 1 else 0
    vy = int(rng.integers(-min(2, vy_max), min(2, vy_max) + 1))
    distractors = int(rng.integers(0, 3)) if texture == "contrast" else 0
    return SceneSpec(seed=seed, num_frames=num_frames, height=height, width=width, shape=shape,
                     size=size, trajectory=trajectory, velocity=(float(vx), float(vy)),
                     texture=texture, distractors=distractors)


def synthesize(n_train: int, n_val: int, seed: int, texture: str = "camouflage", num_frames: int = 6,
               height: int = 64, width: int = 64) -> List[Tuple[ManifestEntry, SyntheticClip]]:
    """n_train + n_val clips in memory with their manifest entries.

    Train and val scenes draw from separate seed streams; clip ids number
    train clips first.
    """
    clips: List[Tuple[ManifestEntry, SyntheticClip]] = []
    index = 0
    for split, count in (("train", n_train), ("val", n_val)):
        for i in range(count):
            scene_seed = derive_seed(seed, split, i)
            spec = sample_scene(scene_seed, texture, num_frames, height, width)
            clip = generate(spec)
            entry = ManifestEntry(
                id=f"{index:03d}", split=split, category=spec.shape, seed=scene_seed,
                frames=spec.num_frames, texture=spec.texture, boxes=[list(b) for b in clip.boxes],
            )
            clips.append((entry, clip))
            logger.debug(f"Generated clip {entry['id']} ({split}, {spec.shape}, {spec.trajectory}, v={spec.velocity})")
            index += 1
    return clips


def make_dataset(store: DatasetStore, n_train: int, n_val: int, seed: int, texture: str = "camouflage",
                 num_frames: int = 6, height: int = 64, width: int = 64) -> List[ManifestEntry]:
    """Writes the clips of `synthesize` with their masks and a manifest."""
    entries: List[ManifestEntry] = []
    for entry, clip in synthesize(n_train, n_val, seed, texture, num_frames, height, width):
        store.write_clip(entry["id"], clip.frames)
        store.write_masks(entry["id"], clip.masks)
        entries.append(entry)
    store.write_manifest(entries)
    logger.info(f"Wrote {n_train} train and {n_val} val clips to {store.root}")
    return entries


def split_entries(entries: List[ManifestEntry], split: Optional[str]) -> List[ManifestEntry]:
    if split is None:
        return list(entries)
    return [e for e in entries if e["split"] == split]
