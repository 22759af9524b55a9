import json

import pytest
from unittest.mock import MagicMock

from rich.panel import Panel
from rich.table import Table

from medvt.infrastructure.cli.display import ConsoleDisplay


@pytest.fixture
def mock_console():
    return MagicMock()


@pytest.fixture
def mock_err():
    return MagicMock()


@pytest.fixture
def console_display(mock_console: MagicMock, mock_err: MagicMock):
    """ConsoleDisplay with both rich consoles replaced by mocks."""
    display = ConsoleDisplay()
    display._console = mock_console
    display._err = mock_err
    return display


def test_display_output_plain_and_titled(console_display: ConsoleDisplay, mock_console: MagicMock):
    """Plain text prints as is; a title wraps it in a panel."""
    console_display.display_output("done")
    mock_console.print.assert_called_once_with("done", highlight=False)

    console_display.display_output("body", title="Summary")
    args, _ = mock_console.print.call_args
    assert isinstance(args[0], Panel)


def test_errors_and_warnings_go_to_stderr(console_display: ConsoleDisplay, mock_console: MagicMock,
                                          mock_err: MagicMock):
    console_display.display_error("bad checkpoint")
    console_display.display_warning("ordering violated")

    mock_err.print.assert_any_call("[bold red]Error:[/bold red] bad checkpoint", highlight=False)
    mock_err.print.assert_any_call("[yellow]Warning:[/yellow] ordering violated", highlight=False)
    mock_console.print.assert_not_called()


def test_quiet_display_drops_info_and_progress(mock_err: MagicMock):
    """--json runs keep stderr to errors and warnings."""
    display = ConsoleDisplay(quiet=True)
    display._err = mock_err
    display.display_info("Stage stage1: 10 iterations")
    display.display_progress("stage1 iter 20: loss 0.1")
    mock_err.print.assert_not_called()
    display.display_error("still shown")
    mock_err.print.assert_called_once()


def test_display_progress(console_display: ConsoleDisplay, mock_err: MagicMock):
    console_display.display_progress("seed 0: baseline mIoU=0.5")
    mock_err.print.assert_called_once_with("[dim]seed 0: baseline mIoU=0.5[/dim]", highlight=False)


def test_display_table_formats_floats(console_display: ConsoleDisplay, mock_console: MagicMock):
    """Floats are shown with four decimals, one row per entry."""
    console_display.display_table("Evaluation", ["measure", "mean"], [["J", 0.123456], ["F", 1]])

    args, _ = mock_console.print.call_args
    table = args[0]
    assert isinstance(table, Table)
    assert [c.header for c in table.columns] == ["measure", "mean"]
    assert list(table.columns[1].cells) == ["0.1235", "1"]
    assert table.row_count == 2


def test_display_json_writes_sorted_json_to_stdout(console_display: ConsoleDisplay, capsys):
    console_display.display_json({"b": 1, "a": [0.5]})
    out = capsys.readouterr().out
    assert json.loads(out) == {"a": [0.5], "b": 1}
    assert out.index('"a"') < out.index('"b"')
