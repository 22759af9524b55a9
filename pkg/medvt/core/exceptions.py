"""Exception hierarchy for medvt.

Core code raises these typed errors; services log and re-raise them; the
CommandHandler turns them into console errors and process exit codes.
"""

from typing import Optional, Sequence


class MedvtError(Exception):
    """Base class for every error raised by medvt."""


class DimensionError(MedvtError):
    """Raised when tensor extents do not line up for an operation."""

    def __init__(self, message: str, *shapes: Sequence[int]):
        self.shapes = tuple(tuple(int(e) for e in s) for s in shapes)
        if self.shapes:
            message = f"{message}: " + " vs ".join(str(s) for s in self.shapes)
        super().__init__(message)


class ConfigError(MedvtError):
    """Raised for invalid hyperparameters or a malformed configuration file."""


class DegenerateRowError(MedvtError):
    """Raised when a normalization row has no admissible entry.

    Happens for an all -inf softmax slice, for a query whose keys are all
    masked, and for a zero-degree row in the random-walk normalization.
    """

    def __init__(self, message: str, rows: Optional[Sequence[int]] = None):
        self.rows = list(rows) if rows is not None else []
        super().__init__(message)


class NonFiniteError(MedvtError):
    """Raised when a value that must be finite is NaN or infinite."""


class SceneError(MedvtError):
    """Raised when a synthetic scene cannot be generated as specified."""


class MetricsError(MedvtError):
    """Raised for invalid evaluation inputs."""


class SerializationError(MedvtError):
    """Raised when an MVT1, PGM or manifest file cannot be read or written."""


class TrainingDivergedError(MedvtError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, iteration: int, stage: str, checkpoint: Optional[str]):
        self.iteration = iteration
        self.stage = stage
        self.checkpoint = checkpoint
        super().__init__(
            f"Non-finite loss at iteration {iteration} of stage '{stage}'. "
            f"Last good checkpoint: {checkpoint or 'none'}"
        )


class CheckFailedError(MedvtError):
    """Raised by verification suites when at least one check fails."""
