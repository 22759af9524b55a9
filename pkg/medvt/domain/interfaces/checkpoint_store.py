"""Interface for persisting parameter stores."""

import abc

from medvt.core.autodiff.params import ParamStore


class CheckpointStore(abc.ABC):
    """Abstract Base Class for checkpoint persistence.

    A checkpoint holds every named parameter together with its trainable
    flag, so a reload reproduces the store exactly.
    """

    @abc.abstractmethod
    def save(self, params: ParamStore, path: str) -> str:
        """Writes the checkpoint and returns the location actually written."""
        pass

    @abc.abstractmethod
    def load(self, path: str) -> ParamStore:
        """Reads a checkpoint written by `save`."""
        pass

    @abc.abstractmethod
    def exists(self, path: str) -> bool:
        pass
