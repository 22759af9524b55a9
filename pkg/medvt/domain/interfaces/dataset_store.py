"""Interface for reading and writing synthetic datasets.

Layout on disk is the store's concern; the generator and the services only
talk in clip ids, tensors and manifest entries.
"""

import abc
from typing import List

from medvt.domain.models.common import LabelMap, ManifestEntry, Tensor


class DatasetStore(abc.ABC):
    """Abstract Base Class for dataset persistence."""

    @property
    @abc.abstractmethod
    def root(self) -> str:
        """Location of the dataset, for messages and reports."""
        pass

    @abc.abstractmethod
    def write_clip(self, clip_id: str, frames: Tensor) -> None:
        """Stores the (T, H, W, 3) frames of one clip."""
        pass

    @abc.abstractmethod
    def write_masks(self, clip_id: str, masks: LabelMap) -> None:
        """Stores the (T, H, W) groundtruth class maps of one clip, one file per frame."""
        pass

    @abc.abstractmethod
    def write_manifest(self, entries: List[ManifestEntry]) -> None:
        pass

    @abc.abstractmethod
    def read_manifest(self) -> List[ManifestEntry]:
        pass

    @abc.abstractmethod
    def read_clip(self, clip_id: str) -> Tensor:
        pass

    @abc.abstractmethod
    def read_masks(self, clip_id: str, num_frames: int) -> LabelMap:
        pass
