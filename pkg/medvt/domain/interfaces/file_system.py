"""Interface for writing run artefacts: reports, loss curves, predicted masks and tensor dumps."""

import abc
from pathlib import Path
from typing import Any, Iterable, List, Union

from medvt.domain.models.common import LabelMap, LossRecord, Tensor

PathLike = Union[str, Path]


class FileSystem(abc.ABC):
    """Abstract Base Class for artefact I/O."""

    @abc.abstractmethod
    def write_text(self, path: PathLike, content: str) -> Path:
        pass

    @abc.abstractmethod
    def write_json(self, path: PathLike, payload: Any) -> Path:
        """Writes payload as indented JSON with sorted keys."""
        pass

    @abc.abstractmethod
    def write_loss_curve(self, path: PathLike, records: Iterable[LossRecord]) -> Path:
        pass

    @abc.abstractmethod
    def write_tensor(self, path: PathLike, x: Tensor) -> Path:
        pass

    @abc.abstractmethod
    def write_mask_frames(self, directory: PathLike, stem: str, masks: LabelMap) -> List[Path]:
        pass

    @abc.abstractmethod
    def read_mask_frames(self, directory: PathLike, stem: str, num_frames: int) -> LabelMap:
        pass
