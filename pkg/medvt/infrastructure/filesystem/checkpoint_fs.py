"""Checkpoint directories: one MVT1 file per parameter plus a JSON manifest."""

import json
import logging
from pathlib import Path

import numpy as np

from medvt.core.autodiff.params import ParamStore
from medvt.core.exceptions import SerializationError
from medvt.domain.interfaces.checkpoint_store import CheckpointStore
from medvt.infrastructure.filesystem.local_fs import MANIFEST_NAME, dump_json
from medvt.infrastructure.serialization import load_tensor, save_tensor

logger = logging.getLogger(__name__)


class DirectoryCheckpointStore(CheckpointStore):
    """`<dir>/<param-name>.mvt1` for every parameter, described by `<dir>/manifest.json`."""

    def save(self, params: ParamStore, path: str) -> str:
        directory = Path(path)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = []
        for name, entry in params.items():
            file_name = f"{name}.mvt1"
            save_tensor(directory / file_name, entry.value)
            manifest.append({
                "name": name,
                "dtype": np.dtype(entry.value.dtype).name,
                "shape": list(entry.value.shape),
                "trainable": bool(entry.trainable),
                "file": file_name,
            })
        manifest.sort(key=lambda e: e["name"])
        (directory / MANIFEST_NAME).write_text(dump_json(manifest), encoding="utf-8")
        logger.info(f"Saved checkpoint with {len(manifest)} tensors to {directory}")
        return str(directory)

    def load(self, path: str) -> ParamStore:
        directory = Path(path)
        manifest_path = directory / MANIFEST_NAME
        if not manifest_path.is_file():
            raise SerializationError(f"No checkpoint manifest at {manifest_path}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise SerializationError(f"Malformed checkpoint manifest {manifest_path}: {e}") from e
        store = ParamStore()
        for item in manifest:
            value = load_tensor(directory / item["file"])
            if list(value.shape) != list(item["shape"]) or value.dtype.name != item["dtype"]:
                raise SerializationError(f"Checkpoint tensor '{item['name']}' does not match its manifest entry")
            store.add(item["name"], value, trainable=bool(item["trainable"]))
        logger.info(f"Loaded checkpoint with {len(store)} tensors from {directory}")
        return store

    def exists(self, path: str) -> bool:
        return (Path(path) / MANIFEST_NAME).is_file()
