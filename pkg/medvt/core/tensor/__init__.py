"""Tensor-core: numpy-backed primitives and the seeded generator."""

from medvt.core.tensor import ops
from medvt.core.tensor.rng import ALGORITHM, Rng, derive_seed, make_rng

__all__ = ["ops", "ALGORITHM", "Rng", "derive_seed", "make_rng"]
