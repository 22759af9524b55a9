"""Domain events emitted by the trainer.

Listeners (the CLI progress display, tests) subscribe to these instead of
parsing log output.
"""

from dataclasses import dataclass, field
import time
from typing import Optional


@dataclass
class DomainEvent:
    """Base class for domain events."""
    pass


@dataclass
class StageStarted(DomainEvent):
    stage: str
    iterations: int
    trainable_params: int
    timestamp: float = field(default_factory=time.time)


@dataclass
class IterationCompleted(DomainEvent):
    stage: str
    iteration: int
    loss: float
    lr: float
    timestamp: float = field(default_factory=time.time)


@dataclass
class CheckpointSaved(DomainEvent):
    stage: str
    iteration: int
    path: str
    timestamp: float = field(default_factory=time.time)


@dataclass
class TrainingDiverged(DomainEvent):
    """The loss went non-finite; training stops with the last good checkpoint."""
    stage: str
    iteration: int
    checkpoint: Optional[str] = None
    timestamp: float = field(default_factory=time.time)


@dataclass
class StageCompleted(DomainEvent):
    stage: str
    iterations: int
    final_loss: float
    timestamp: float = field(default_factory=time.time)
