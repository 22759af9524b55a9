"""Binary PGM (P5) with 8-bit class-index values."""

import logging
import re
from pathlib import Path
from typing import Union

import numpy as np

from medvt.core.exceptions import SerializationError
from medvt.domain.models.common import LabelMap

logger = logging.getLogger(__name__)

_HEADER = re.compile(rb"P5\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def encode_pgm(mask: LabelMap) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise SerializationError(f"PGM holds one (H, W) map, got shape {mask.shape}")
    if mask.size and (mask.min() < 0 or mask.max() > 255):
        raise SerializationError("PGM class indices must lie in [0, 255]")
    h, w = mask.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + mask.astype(np.uint8).tobytes()


def decode_pgm(data: bytes) -> LabelMap:
    match = _HEADER.match(data)
    if match is None:
        raise SerializationError("not a binary PGM (P5) stream")
    w, h, maxval = (int(g) for g in match.groups())
    if maxval > 255:
        raise SerializationError(f"only 8-bit PGM is supported, maxval={maxval}")
    payload = data[match.end():]
    if len(payload) != w * h:
        raise SerializationError(f"PGM payload has {len(payload)} bytes, expected {w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_pgm(path: Union[str, Path], mask: LabelMap) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_pgm(mask))


def read_pgm(path: Union[str, Path]) -> LabelMap:
    path = Path(path)
    if not path.is_file():
        raise SerializationError(f"PGM file not found: {path}")
    return decode_pgm(path.read_bytes())
