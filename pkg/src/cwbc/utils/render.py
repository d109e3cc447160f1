"""Lightweight rendering helpers for terminal-facing output."""

from collections.abc import Sequence

__all__ = ["format_cell", "render_table"]


def format_cell(value: object) -> str:
    """Format one table cell; floats get four significant digits.

    Examples
    --------
    >>> from cwbc.utils import format_cell
    >>> format_cell(3.14159), format_cell(None), format_cell("wc")
    ('3.142', '-', 'wc')
    """
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4g}"
    return str(value)


def render_table(headers: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
    """Render a simple plain-text table.

    Numbers are right-aligned, everything else is left-aligned.

    Examples
    --------
    >>> from cwbc.utils import render_table
    >>> print(render_table(("variant", "mean"), [("base", 12.5), ("wc", 20.25)]))
    variant   mean
    -------  -----
    base      12.5
    wc       20.25
    """
    if not all(len(row) == len(headers) for row in rows):
        raise ValueError("Number of headers must match number of columns in rows.")

    cells = [[format_cell(value) for value in row] for row in rows]
    numeric = [
        bool(rows)
        and all(isinstance(row[index], int | float | None) for row in rows)
        for index in range(len(headers))
    ]
    widths = [
        max([len(header), *(len(row[index]) for row in cells)])
        for index, header in enumerate(headers)
    ]

    def format_row(row: Sequence[str]) -> str:
        return "  ".join(
            value.rjust(widths[index]) if numeric[index] else value.ljust(widths[index])
            for index, value in enumerate(row)
        ).rstrip()

    separator = "  ".join("-" * width for width in widths)
    table_lines = [
        format_row(headers),
        separator,
        *(format_row(row) for row in cells),
    ]
    return "\n".join(table_lines)
