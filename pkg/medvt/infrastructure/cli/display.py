"""Rich console front end.

Tables and JSON documents go to stdout; errors, warnings, info lines and
progress go to stderr, so `medvt ... --json > report.json` captures only
the document.
"""

import json
import logging
from typing import Any, Dict, List, Sequence

import typer
from rich.box import SIMPLE
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from medvt.domain.interfaces.user_interface import UserInterface

logger = logging.getLogger(__name__)


def _cell(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


class ConsoleDisplay(UserInterface):
    """Concrete implementation of UserInterface using the rich library for console output."""

    def __init__(self, quiet: bool = False):
        """Args:
            quiet: suppress info and progress lines (used with --json).
        """
        self._console = Console()
        self._err = Console(stderr=True)
        self.quiet = quiet

    @property
    def console(self) -> Console:
        return self._console

    def display_output(self, output: str, **kwargs: Any) -> None:
        title = kwargs.get("title")
        if title:
            self._console.print(Panel(str(output), title=title, title_align="left", box=SIMPLE))
        else:
            self._console.print(str(output), highlight=False)

    def display_error(self, error_message: str, **kwargs: Any) -> None:
        self._err.print(f"[bold red]Error:[/bold red] {error_message}", highlight=False)

    def display_warning(self, warning_message: str, **kwargs: Any) -> None:
        self._err.print(f"[yellow]Warning:[/yellow] {warning_message}", highlight=False)

    def display_info(self, info_message: str, **kwargs: Any) -> None:
        if not self.quiet:
            self._err.print(f"[cyan]{info_message}[/cyan]", highlight=False)

    def display_progress(self, message: str, **kwargs: Any) -> None:
        if not self.quiet:
            self._err.print(f"[dim]{message}[/dim]", highlight=False)

    def display_table(self, title: str, columns: Sequence[str], rows: List[Sequence[Any]], **kwargs: Any) -> None:
        table = Table(title=title, box=SIMPLE, title_justify="left")
        for i, column in enumerate(columns):
            table.add_column(column, justify="left" if i == 0 else "right")
        for row in rows:
            table.add_row(*(_cell(v) for v in row))
        self._console.print(table)

    def display_json(self, payload: Dict[str, Any]) -> None:
        typer.echo(json.dumps(payload, indent=2, sort_keys=True))
