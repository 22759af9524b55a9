"""Interface for interacting with the batch operator.

Defines the contract for displaying results, tables, errors and warnings,
allowing different front ends (rich console, JSON lines, test doubles).
"""

import abc
from typing import Any, Dict, List, Sequence


class UserInterface(abc.ABC):
    """Abstract Base Class for user interaction."""

    @abc.abstractmethod
    def display_output(self, output: str, **kwargs: Any) -> None:
        """Displays standard output to the user.

        Args:
            output: The text to display.
            **kwargs: Additional arguments for formatting (e.g., title, style).
        """
        pass

    @abc.abstractmethod
    def display_error(self, error_message: str, **kwargs: Any) -> None:
        pass

    @abc.abstractmethod
    def display_warning(self, warning_message: str, **kwargs: Any) -> None:
        pass

    @abc.abstractmethod
    def display_info(self, info_message: str, **kwargs: Any) -> None:
        pass

    @abc.abstractmethod
    def display_table(self, title: str, columns: Sequence[str], rows: List[Sequence[Any]], **kwargs: Any) -> None:
        """Displays rows as an aligned table with the given column headers."""
        pass

    @abc.abstractmethod
    def display_json(self, payload: Dict[str, Any]) -> None:
        """Writes a machine-readable JSON document to standard output."""
        pass

    @abc.abstractmethod
    def display_progress(self, message: str, **kwargs: Any) -> None:
        """Reports progress of a long-running job (training iterations, ablation cells)."""
        pass
