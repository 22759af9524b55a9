"""Binary formats: MVT1 tensors and PGM label maps."""

from medvt.infrastructure.serialization.mvt1 import decode_mvt1, encode_mvt1, load_tensor, save_tensor
from medvt.infrastructure.serialization.pgm import decode_pgm, encode_pgm, read_pgm, write_pgm

__all__ = [
    "decode_mvt1", "encode_mvt1", "load_tensor", "save_tensor",
    "decode_pgm", "encode_pgm", "read_pgm", "write_pgm",
]
