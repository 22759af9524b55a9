"""Named deterministic random generator used for every seeded draw.

All randomness (weight init, query init Q^r, synthetic scenes, augmentation
and gradient-check sampling) goes through numpy's PCG64 bit generator, whose
stream is fixed for a given seed across runs and platforms.
"""

import hashlib
from typing import Union

import numpy as np

ALGORITHM = "PCG64"

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Returns a Generator over PCG64 seeded with `seed`."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *keys: Union[str, int]) -> int:
    """Derives a stable 64-bit sub-seed from a base seed and a key path.

    Python's built-in hash is salted per process, so the key path is hashed
    with blake2b instead.
    """
    payload = "/".join([str(int(seed))] + [str(k) for k in keys]).encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def normal(rng: Rng, shape, std: float, dtype=np.float64) -> np.ndarray:
    """Zero-mean Gaussian draw, generated in f64 then cast so both dtypes share a stream."""
    return (rng.standard_normal(size=shape) * std).astype(dtype)
