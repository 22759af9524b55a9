"""Named parameter store.

Every learned tensor of the model lives here under a stable dotted name
(e.g. ``encoder.within.s4.layer0.attn.wq``) with a trainable flag. Stores are
treated as values: optimizers return a new store, and untouched entries keep
their original array objects, so frozen parameters stay bit-identical.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from medvt.core.exceptions import ConfigError, DimensionError
from medvt.domain.models.common import Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ParamEntry:
    value: Tensor
    trainable: bool = True


class ParamStore:
    """Ordered mapping name -> (value, trainable)."""

    def __init__(self, entries: Optional[Mapping[str, ParamEntry]] = None):
        self._entries: Dict[str, ParamEntry] = dict(entries or {})

    def add(self, name: str, value: Tensor, trainable: bool = True) -> None:
        if name in self._entries:
            raise ConfigError(f"Parameter '{name}' registered twice")
        self._entries[name] = ParamEntry(np.asarray(value), trainable)

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def names(self) -> List[str]:
        return list(self._entries)

    def items(self) -> Iterable[Tuple[str, ParamEntry]]:
        return self._entries.items()

    def entry(self, name: str) -> ParamEntry:
        try:
            return self._entries[name]
        except KeyError:
            raise ConfigError(f"Unknown parameter '{name}'") from None

    def value(self, name: str) -> Tensor:
        return self.entry(name).value

    def is_trainable(self, name: str) -> bool:
        return self.entry(name).trainable

    def trainable_names(self) -> List[str]:
        return [n for n, e in self._entries.items() if e.trainable]

    def num_values(self, trainable_only: bool = False) -> int:
        return sum(int(e.value.size) for e in self._entries.values() if e.trainable or not trainable_only)

    def with_values(self, updates: Mapping[str, Tensor]) -> "ParamStore":
        """New store with some values replaced; shapes must not change."""
        entries = dict(self._entries)
        for name, value in updates.items():
            old = self.entry(name)
            if value.shape != old.value.shape:
                raise DimensionError(f"new value for '{name}' changes its shape", old.value.shape, value.shape)
            entries[name] = ParamEntry(value, old.trainable)
        return ParamStore(entries)

    def with_trainable(self, predicate: Callable[[str], bool]) -> "ParamStore":
        """New store whose trainable flags are predicate(name); values are shared."""
        return ParamStore({n: ParamEntry(e.value, bool(predicate(n))) for n, e in self._entries.items()})

    def freeze_prefixes(self, prefixes: Iterable[str]) -> "ParamStore":
        prefixes = tuple(prefixes)
        return self.with_trainable(lambda n: self.is_trainable(n) and not n.startswith(prefixes))

    def train_only_prefixes(self, prefixes: Iterable[str]) -> "ParamStore":
        prefixes = tuple(prefixes)
        return self.with_trainable(lambda n: n.startswith(prefixes))

    def astype(self, dtype) -> "ParamStore":
        return ParamStore({n: ParamEntry(e.value.astype(dtype), e.trainable) for n, e in self._entries.items()})

    def snapshot(self) -> Dict[str, bytes]:
        """Raw bytes per parameter, for bit-identity comparisons."""
        return {n: e.value.tobytes() for n, e in self._entries.items()}
