"""Generates synthetic datasets and loads their splits for training and evaluation."""

import logging
from typing import List, NamedTuple, Optional

from medvt.core.data.synthclip import make_dataset, split_entries
from medvt.core.exceptions import SerializationError
from medvt.domain.interfaces.dataset_store import DatasetStore
from medvt.domain.interfaces.user_interface import UserInterface
from medvt.domain.models.common import LabelMap, ManifestEntry, Tensor
from medvt.domain.models.scene import DatasetSummary

logger = logging.getLogger(__name__)


class LoadedClip(NamedTuple):
    entry: ManifestEntry
    frames: Tensor
    masks: LabelMap


class DatasetService:
    """Thin orchestration over synthclip and a DatasetStore."""

    def __init__(self, ui: UserInterface):
        self.ui = ui

    def generate(self, store: DatasetStore, n_train: int, n_val: int, seed: int, texture: str = "camouflage",
                 num_frames: int = 6, height: int = 64, width: int = 64) -> DatasetSummary:
        logger.info(f"Generating {n_train}+{n_val} {texture} clips (seed {seed}) into {store.root}")
        entries = make_dataset(store, n_train, n_val, seed, texture, num_frames, height, width)
        summary = DatasetSummary(
            root=store.root,
            train=[e["id"] for e in split_entries(entries, "train")],
            val=[e["id"] for e in split_entries(entries, "val")],
        )
        self.ui.display_info(f"Wrote {summary.total} clips to {store.root}")
        return summary

    def load(self, store: DatasetStore, split: Optional[str] = None) -> List[LoadedClip]:
        """Clips of one split (all clips for None), in manifest order."""
        entries = split_entries(store.read_manifest(), split)
        clips = []
        for entry in entries:
            frames = store.read_clip(entry["id"])
            masks = store.read_masks(entry["id"], int(entry["frames"]))
            if frames.shape[:3] != masks.shape:
                raise SerializationError(f"clip {entry['id']}: frames {frames.shape} and masks {masks.shape} disagree")
            clips.append(LoadedClip(entry, frames, masks))
        logger.debug(f"Loaded {len(clips)} clips (split={split or 'all'}) from {store.root}")
        return clips
