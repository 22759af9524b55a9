"""Local-disk adapters: the synthetic dataset store and plain output files.

Dataset layout under the root directory:
    clips/NNN.mvt1        (T, H, W, 3) frames
    masks/NNN_f.pgm       one class-index map per frame f
    manifest.json         list of ManifestEntry, keys sorted
"""

import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Union

import numpy as np

from medvt.core.exceptions import SerializationError
from medvt.domain.interfaces.dataset_store import DatasetStore
from medvt.domain.interfaces.file_system import FileSystem
from medvt.domain.models.common import LabelMap, LossRecord, ManifestEntry, Tensor
from medvt.infrastructure.serialization import load_tensor, read_pgm, save_tensor, write_pgm

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
LOSS_CURVE_HEADER = ("iter", "stage", "loss")


def dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


class LocalFileSystem(FileSystem):
    """Writes run artefacts (reports, loss curves, predictions) below the working directory."""

    def write_text(self, path: Union[str, Path], content: str) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content, encoding="utf-8")
        except OSError as e:
            logger.error(f"Error writing file {path}: {e}", exc_info=True)
            raise SerializationError(f"Failed to write {path}: {e}") from e
        logger.debug(f"Wrote {len(content)} characters to {path}")
        return path

    def write_json(self, path: Union[str, Path], payload: Any) -> Path:
        return self.write_text(path, dump_json(payload))

    def write_loss_curve(self, path: Union[str, Path], records: Iterable[LossRecord]) -> Path:
        """CSV `iter,stage,loss`; losses use repr so the file round-trips exactly."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(LOSS_CURVE_HEADER)
        for record in records:
            writer.writerow((record["iter"], record["stage"], repr(float(record["loss"]))))
        return self.write_text(path, buffer.getvalue())

    def write_tensor(self, path: Union[str, Path], x: Tensor) -> Path:
        save_tensor(path, x)
        return Path(path)

    def write_mask_frames(self, directory: Union[str, Path], stem: str, masks: LabelMap) -> List[Path]:
        """One `<stem>_<f>.pgm` per frame."""
        directory = Path(directory)
        paths = []
        for f, mask in enumerate(np.asarray(masks)):
            path = directory / f"{stem}_{f}.pgm"
            write_pgm(path, mask)
            paths.append(path)
        return paths

    def read_mask_frames(self, directory: Union[str, Path], stem: str, num_frames: int) -> LabelMap:
        directory = Path(directory)
        return np.stack([read_pgm(directory / f"{stem}_{f}.pgm") for f in range(num_frames)])


class LocalDatasetStore(DatasetStore):
    """DatasetStore over a directory."""

    def __init__(self, root: Union[str, Path]):
        self._root = Path(root)
        self._files = LocalFileSystem()

    @property
    def root(self) -> str:
        return str(self._root)

    def clip_path(self, clip_id: str) -> Path:
        return self._root / "clips" / f"{clip_id}.mvt1"

    def write_clip(self, clip_id: str, frames: Tensor) -> None:
        save_tensor(self.clip_path(clip_id), frames)

    def write_masks(self, clip_id: str, masks: LabelMap) -> None:
        self._files.write_mask_frames(self._root / "masks", clip_id, masks)

    def write_manifest(self, entries: List[ManifestEntry]) -> None:
        self._files.write_json(self._root / MANIFEST_NAME, list(entries))

    def read_manifest(self) -> List[ManifestEntry]:
        path = self._root / MANIFEST_NAME
        if not path.is_file():
            raise SerializationError(f"No dataset manifest at {path}")
        try:
            entries = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SerializationError(f"Malformed manifest {path}: {e}") from e
        if not isinstance(entries, list) or any("id" not in e or "frames" not in e for e in entries):
            raise SerializationError(f"Manifest {path} must be a list of clip entries with 'id' and 'frames'")
        return entries

    def read_clip(self, clip_id: str) -> Tensor:
        return load_tensor(self.clip_path(clip_id))

    def read_masks(self, clip_id: str, num_frames: int) -> LabelMap:
        return self._files.read_mask_frames(self._root / "masks", clip_id, num_frames)
