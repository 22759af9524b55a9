"""MVT1 binary tensor codec.

Layout: magic ``MVT1``, u8 dtype code (0 = f32, 1 = f64), u8 rank,
rank x u32 little-endian extents, then the row-major little-endian payload.
Used for checkpoints, clips and feature dumps.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from medvt.core.exceptions import SerializationError
from medvt.domain.models.common import Tensor

logger = logging.getLogger(__name__)

MAGIC = b"MVT1"
DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def encode_mvt1(x: Tensor) -> bytes:
    array = np.asarray(x)
    dtype = array.dtype.newbyteorder("<")
    if dtype not in DTYPE_CODES:
        raise SerializationError(f"MVT1 stores f32 or f64 only, got {array.dtype}")
    if array.ndim > 255:
        raise SerializationError(f"rank {array.ndim} exceeds the MVT1 limit of 255")
    header = MAGIC + struct.pack("<BB", DTYPE_CODES[dtype], array.ndim)
    header += struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=dtype).tobytes(order="C")


def decode_mvt1(data: bytes) -> Tensor:
    if len(data) < 6 or data[:4] != MAGIC:
        raise SerializationError("not an MVT1 stream (bad magic)")
    code, rank = struct.unpack_from("<BB", data, 4)
    if code not in CODE_DTYPES:
        raise SerializationError(f"unknown MVT1 dtype code {code}")
    offset = 6 + 4 * rank
    if len(data) < offset:
        raise SerializationError("truncated MVT1 header")
    shape = struct.unpack_from(f"<{rank}I", data, 6)
    dtype = CODE_DTYPES[code]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) - offset != expected:
        raise SerializationError(f"MVT1 payload has {len(data) - offset} bytes, expected {expected} for shape {shape}")
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).astype(dtype.newbyteorder("="))


def save_tensor(path: Union[str, Path], x: Tensor) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_mvt1(x))
    logger.debug(f"Wrote tensor {np.shape(x)} to {path}")


def load_tensor(path: Union[str, Path]) -> Tensor:
    path = Path(path)
    if not path.is_file():
        raise SerializationError(f"Tensor file not found: {path}")
    return decode_mvt1(path.read_bytes())
