"""Report writers: JSON documents, CSV tables and rich summaries for the terminal."""

import csv
import json
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.table import Table


def _format_cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def write_json(path: Path | str, data: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path | str, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(row.get(column)) for column in columns])
    return path


def _summary_value(value: Any) -> str | None:
    if isinstance(value, dict) and set(value) == {"value", "reason"}:
        return f"{value['value']:.4f}" if value["value"] is not None else f"undefined ({value['reason']})"
    if isinstance(value, float):
        return f"{value:.4f}"
    if isinstance(value, (str, int, bool)) or value is None:
        return str(value)
    if isinstance(value, list) and all(isinstance(v, (str, int, float)) for v in value) and len(value) <= 6:
        return ", ".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in value)
    return None


def summary_table(title: str, output: Mapping[str, Any]) -> Table:
    """Scalar fields of a command result as a two-column table; nested fields are skipped."""
    table = Table(title=title, show_header=True, header_style="bold")
    table.add_column("field")
    table.add_column("value")
    for key in sorted(output):
        rendered = _summary_value(output[key])
        if rendered is not None:
            table.add_row(key, rendered)
    return table


def print_summary(console: Console, title: str, output: Mapping[str, Any]) -> None:
    console.print(summary_table(title, output))
